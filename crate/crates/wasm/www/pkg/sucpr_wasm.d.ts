/* tslint:disable */
/* eslint-disable */

/**
 * `K_max(b)` over the candidate block sizes for each test variant.
 *
 * `setting` is `C_size` or `C_power3` (then `param` is the number of unit roots).
 */
export function kmax_profile(setting: string, n: number, t_len: number, param: number, seed: bigint): string;

/**
 * `P(∫‖W‖² ≤ x)` on `points` equally spaced values in `(0, x_max]`.
 */
export function limit_cdf_curve(n: number, x_max: number, points: number): string;

/**
 * Draws one panel and reports the quadratic coefficient from each estimator.
 *
 * `param` is `ρ` for setting A and `θ` for setting B.
 */
export function simulate_and_estimate(setting: string, n: number, t_len: number, param: number, seed: bigint): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly kmax_profile: (a: number, b: number, c: number, d: number, e: number, f: bigint) => [number, number, number, number];
    readonly limit_cdf_curve: (a: number, b: number, c: number) => [number, number, number, number];
    readonly simulate_and_estimate: (a: number, b: number, c: number, d: number, e: number, f: bigint) => [number, number, number, number];
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
