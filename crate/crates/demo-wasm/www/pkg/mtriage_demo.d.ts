/* tslint:disable */
/* eslint-disable */

export class Frame {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    caption(): string;
    height(): number;
    rgba(): Uint8Array;
    /**
     * Detector output: surviving pixels or line count.
     */
    score(): number;
    width(): number;
}

export function erosion_view(seed: number, index: number, kind: string, threshold: number, kernel: number, iterations: number): Frame;

export function muscle_view(seed: number, index: number, kind: string, canny_low: number, canny_high: number, hough_threshold: number): Frame;

/**
 * Names accepted as `kind`, comma separated; `inlier` gives a clean image.
 */
export function outlier_types(): string;

export function synth_image(seed: number, index: number, kind: string): Frame;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_frame_free: (a: number, b: number) => void;
    readonly erosion_view: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number];
    readonly frame_caption: (a: number) => [number, number];
    readonly frame_height: (a: number) => number;
    readonly frame_rgba: (a: number) => [number, number];
    readonly frame_score: (a: number) => number;
    readonly frame_width: (a: number) => number;
    readonly muscle_view: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number];
    readonly outlier_types: () => [number, number];
    readonly synth_image: (a: number, b: number, c: number, d: number) => [number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
