import { defineConfig } from 'vitest/config';

export default defineConfig({
  test: {
    environment: 'jsdom',
    globals: true,
    include: ['tests/**/*.test.ts'],
    // the live-server contract test compiles a dataset and trains a
    // tiny checkpoint in its setup hook
    testTimeout: 30_000,
    hookTimeout: 180_000,
  },
});
