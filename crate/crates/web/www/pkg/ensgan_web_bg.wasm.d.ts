/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_demo_free: (a: number, b: number) => void;
export const demo_epoch: (a: number) => number;
export const demo_losses: (a: number) => [number, number];
export const demo_member_count: (a: number) => number;
export const demo_mixture: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const demo_new: (a: number, b: number, c: number, d: number) => [number, number, number];
export const demo_preview: (a: number, b: number, c: number) => [number, number, number, number];
export const demo_real_points: (a: number) => [number, number];
export const demo_step: (a: number) => [number, number, number];
export const grid_centers: () => [number, number];
export const mode_stats: (a: number, b: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_start: () => void;
