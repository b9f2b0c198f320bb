/* tslint:disable */
/* eslint-disable */

/**
 * One simulated Lorenz trajectory with its EKF and UKF estimates.
 * Trajectories are row-major `steps × 3`.
 */
export class LorenzRun {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    readonly ekf: Float64Array;
    readonly ekf_nmse_db: number;
    readonly measurements: Float64Array;
    readonly sigma_w2: number;
    readonly truth: Float64Array;
    readonly ukf: Float64Array;
    readonly ukf_nmse_db: number;
}

/**
 * Scalar prior, likelihood and posterior densities on a grid over `x`.
 */
export class ScalarUpdate {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    /**
     * `N(y; h x, noise_var)` as a function of `x`, scaled to unit area.
     */
    readonly likelihood: Float64Array;
    readonly posterior: Float64Array;
    readonly prior: Float64Array;
    readonly summary: Float64Array;
    readonly xs: Float64Array;
}

/**
 * KF and LS NMSE (dB) on the 2-D linear model across [`SWEEP_SMNR_DB`].
 * Returns rows `[smnr, ls, kf]` flattened.
 */
export function linear_sweep(n_test: number, steps: number, seed: number): Float64Array;

/**
 * Simulates a Lorenz trajectory observed at `smnr_db` and filters it.
 */
export function lorenz_filter(smnr_db: number, steps: number, seed: number): LorenzRun;

/**
 * Conditions the scalar prior `N(prior_mean, prior_var)` on `y = h x + w`,
 * `w ~ N(0, noise_var)`, and tabulates the densities at `points` grid nodes
 * on `[lo, hi]`.
 */
export function scalar_update(prior_mean: number, prior_var: number, h: number, noise_var: number, y: number, lo: number, hi: number, points: number): ScalarUpdate;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_lorenzrun_free: (a: number, b: number) => void;
    readonly __wbg_scalarupdate_free: (a: number, b: number) => void;
    readonly linear_sweep: (a: number, b: number, c: number) => [number, number, number, number];
    readonly lorenz_filter: (a: number, b: number, c: number) => [number, number, number];
    readonly lorenzrun_ekf: (a: number) => [number, number];
    readonly lorenzrun_ekf_nmse_db: (a: number) => number;
    readonly lorenzrun_measurements: (a: number) => [number, number];
    readonly lorenzrun_sigma_w2: (a: number) => number;
    readonly lorenzrun_truth: (a: number) => [number, number];
    readonly lorenzrun_ukf: (a: number) => [number, number];
    readonly lorenzrun_ukf_nmse_db: (a: number) => number;
    readonly scalar_update: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number) => [number, number, number];
    readonly scalarupdate_likelihood: (a: number) => [number, number];
    readonly scalarupdate_posterior: (a: number) => [number, number];
    readonly scalarupdate_prior: (a: number) => [number, number];
    readonly scalarupdate_summary: (a: number) => [number, number];
    readonly scalarupdate_xs: (a: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
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
