/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_frame_free: (a: number, b: number) => void;
export const erosion_view: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number];
export const frame_caption: (a: number) => [number, number];
export const frame_height: (a: number) => number;
export const frame_rgba: (a: number) => [number, number];
export const frame_score: (a: number) => number;
export const frame_width: (a: number) => number;
export const muscle_view: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number];
export const outlier_types: () => [number, number];
export const synth_image: (a: number, b: number, c: number, d: number) => [number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
