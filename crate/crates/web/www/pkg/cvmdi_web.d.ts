/* tslint:disable */
/* eslint-disable */

/**
 * Normalized dimension versus n for the four energy-test schemes.
 */
export function dimensionCurves(epsilon: number, lo: number, hi: number, points: number): string;

/**
 * Simulate a prepare-and-measure run and bound its covariance locally.
 */
export function estimateRun(mean_photons: number, loss_db: number, xi: number, rounds: bigint, seed: bigint, epsilon: number): string;

/**
 * Asymptotic and finite-size key rates versus n for a symmetric channel.
 */
export function rateCurves(mean_photons: number, loss_db: number, xi: number, beta: number, epsilon: number, lo: number, hi: number, points: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly dimensionCurves: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly estimateRun: (a: number, b: number, c: number, d: bigint, e: bigint, f: number) => [number, number, number, number];
    readonly rateCurves: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number) => [number, number, number, number];
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
