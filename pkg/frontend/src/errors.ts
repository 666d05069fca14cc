export class AdapterError extends Error {}

/** A backend could not be constructed for the given video input. */
export class ModelLoadError extends AdapterError {}

/** A prompted part produced no pixels in frame 0. */
export class EmptyMask extends AdapterError {}

/** Masks, tracks, and clouds disagree on the number of frames. */
export class FrameCountMismatch extends AdapterError {}

/** Prompt or config rejected before any model runs. */
export class ValidationError extends AdapterError {}
