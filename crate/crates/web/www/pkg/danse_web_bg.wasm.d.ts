/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_lorenzrun_free: (a: number, b: number) => void;
export const __wbg_scalarupdate_free: (a: number, b: number) => void;
export const linear_sweep: (a: number, b: number, c: number) => [number, number, number, number];
export const lorenz_filter: (a: number, b: number, c: number) => [number, number, number];
export const lorenzrun_ekf: (a: number) => [number, number];
export const lorenzrun_ekf_nmse_db: (a: number) => number;
export const lorenzrun_measurements: (a: number) => [number, number];
export const lorenzrun_sigma_w2: (a: number) => number;
export const lorenzrun_truth: (a: number) => [number, number];
export const lorenzrun_ukf: (a: number) => [number, number];
export const lorenzrun_ukf_nmse_db: (a: number) => number;
export const scalar_update: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number) => [number, number, number];
export const scalarupdate_likelihood: (a: number) => [number, number];
export const scalarupdate_posterior: (a: number) => [number, number];
export const scalarupdate_prior: (a: number) => [number, number];
export const scalarupdate_summary: (a: number) => [number, number];
export const scalarupdate_xs: (a: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
