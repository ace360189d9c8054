import { defineConfig } from "vitest/config";

// tests spawn a real session service; give them room beyond the 5s default
export default defineConfig({
  test: {
    testTimeout: 15_000,
    hookTimeout: 60_000,
  },
});
