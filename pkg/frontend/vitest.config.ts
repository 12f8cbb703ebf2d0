import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["test/**/*.test.ts"],
    environment: "node",
    // The integration suite boots the Python service and waits for its
    // first jitted track request; everything else finishes in milliseconds.
    testTimeout: 15_000,
    hookTimeout: 120_000,
  },
});
