/* tslint:disable */
/* eslint-disable */

/**
 * Displacement after release, sampled at the control rate.
 */
export class Release {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    readonly m_eff: number;
    readonly nrmse: number;
    readonly reference: Float64Array;
    readonly status: string;
    readonly t: Float64Array;
    readonly x: Float64Array;
}

/**
 * Settled `(x, F_x)` pairs of a push-pull run and their line fit.
 */
export class StaticFit {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    readonly f: Float64Array;
    readonly intercept: number;
    readonly k_hat: number;
    readonly r2: number;
    readonly rel_err_pct: number;
    readonly x: Float64Array;
}

export function release(k_x: number, d_x: number, est_scale: number, duration: number): Release;

export function static_fit(k_x: number, noise_sd: number, seed: number, stride: number): StaticFit;

/**
 * Friction torque at `n` evenly spaced speeds over `[-qd_max, qd_max]`,
 * with the default tanh sharpness.
 */
export function stribeck_curve(tau_c: number, tau_s: number, b_visc: number, qd_s: number, a_shape: number, qd_max: number, n: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_release_free: (a: number, b: number) => void;
    readonly __wbg_staticfit_free: (a: number, b: number) => void;
    readonly release: (a: number, b: number, c: number, d: number) => [number, number, number];
    readonly release_m_eff: (a: number) => number;
    readonly release_nrmse: (a: number) => number;
    readonly release_reference: (a: number) => [number, number];
    readonly release_status: (a: number) => [number, number];
    readonly release_t: (a: number) => [number, number];
    readonly release_x: (a: number) => [number, number];
    readonly static_fit: (a: number, b: number, c: number, d: number) => [number, number, number];
    readonly staticfit_f: (a: number) => [number, number];
    readonly staticfit_intercept: (a: number) => number;
    readonly staticfit_k_hat: (a: number) => number;
    readonly staticfit_r2: (a: number) => number;
    readonly staticfit_rel_err_pct: (a: number) => number;
    readonly staticfit_x: (a: number) => [number, number];
    readonly stribeck_curve: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number];
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
