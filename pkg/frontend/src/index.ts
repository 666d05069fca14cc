export { runAdapter, loadClicks } from "./adapter.js";
export { exportCapture } from "./export.js";
export { loadScene, validateScene } from "./scene.js";
export { sceneBackend, stratifiedQueries } from "./synthetic.js";
export * from "./types.js";
export * from "./errors.js";
