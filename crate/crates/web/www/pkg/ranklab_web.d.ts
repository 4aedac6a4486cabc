/* tslint:disable */
/* eslint-disable */

/**
 * Bound grid over ranks and K in the 1-2-5 series up to 1000.
 */
export function bound_heatmap(catalog_size: number, alpha: number, metric: string): string;

/**
 * Every loss for one positive score against a list of negatives that
 * also plays the rest of the catalog, plus SCE as a function of α.
 */
export function loss_explorer(s_plus: number, negatives: Float64Array, alpha: number, eta: number): string;

/**
 * Monte Carlo frequency against the bound for a target at rank `r_plus`
 * in a Gaussian score vector.
 */
export function mc_check(catalog_size: number, r_plus: number, k: number, alpha: number, trials: number, seed: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly bound_heatmap: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly loss_explorer: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly mc_check: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
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
