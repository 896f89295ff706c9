/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_release_free: (a: number, b: number) => void;
export const __wbg_staticfit_free: (a: number, b: number) => void;
export const release: (a: number, b: number, c: number, d: number) => [number, number, number];
export const release_m_eff: (a: number) => number;
export const release_nrmse: (a: number) => number;
export const release_reference: (a: number) => [number, number];
export const release_status: (a: number) => [number, number];
export const release_t: (a: number) => [number, number];
export const release_x: (a: number) => [number, number];
export const static_fit: (a: number, b: number, c: number, d: number) => [number, number, number];
export const staticfit_f: (a: number) => [number, number];
export const staticfit_intercept: (a: number) => number;
export const staticfit_k_hat: (a: number) => number;
export const staticfit_r2: (a: number) => number;
export const staticfit_rel_err_pct: (a: number) => number;
export const staticfit_x: (a: number) => [number, number];
export const stribeck_curve: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
