/* tslint:disable */
/* eslint-disable */

/**
 * Close series per symbol for one seed of the configured panel:
 * `{"symbols": [...], "closes": [[...], ...], "manifest": {...}}`.
 */
export function generate_market(config: string, seed: bigint): string;

/**
 * Risk report for `intended` given the held book `prev` (both weight maps).
 */
export function risk_gate(intended: string, prev: string, policy: string): string;

/**
 * Run the named cases on one seed; returns `{"svg": ..., "metrics": {case: bundle}}`.
 */
export function run_cases(config: string, cases: string, seed: bigint): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly generate_market: (a: number, b: number, c: bigint) => [number, number, number, number];
    readonly risk_gate: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly run_cases: (a: number, b: number, c: number, d: number, e: bigint) => [number, number, number, number];
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
