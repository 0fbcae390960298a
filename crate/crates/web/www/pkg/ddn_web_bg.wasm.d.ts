/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_demo_free: (a: number, b: number) => void;
export const demo_density: (a: number, b: number, c: number) => [number, number, number, number];
export const demo_epochs: (a: number) => number;
export const demo_new: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number];
export const demo_sse: (a: number, b: number) => [number, number, number];
export const demo_train: (a: number, b: number) => [number, number, number];
export const oracleDensity: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const sampleTask: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_start: () => void;
