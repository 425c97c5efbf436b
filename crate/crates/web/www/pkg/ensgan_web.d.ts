/* tslint:disable */
/* eslint-disable */

export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    epoch(): number;
    /**
     * `[generator loss, discriminator loss]` of the last epoch.
     */
    losses(): Float64Array;
    member_count(): number;
    mixture(t: number, n: number, seed: number): Float64Array;
    constructor(seed: number, points: number, width: number, epochs: number);
    preview(n: number, seed: number): Float64Array;
    real_points(): Float64Array;
    step(): boolean;
}

export function grid_centers(): Float64Array;

export function mode_stats(xy: Float64Array): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly demo_epoch: (a: number) => number;
    readonly demo_losses: (a: number) => [number, number];
    readonly demo_member_count: (a: number) => number;
    readonly demo_mixture: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly demo_new: (a: number, b: number, c: number, d: number) => [number, number, number];
    readonly demo_preview: (a: number, b: number, c: number) => [number, number, number, number];
    readonly demo_real_points: (a: number) => [number, number];
    readonly demo_step: (a: number) => [number, number, number];
    readonly grid_centers: () => [number, number];
    readonly mode_stats: (a: number, b: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
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
