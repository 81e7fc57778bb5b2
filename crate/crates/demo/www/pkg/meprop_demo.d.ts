/* tslint:disable */
/* eslint-disable */

/**
 * A two-hidden-layer network on a small synthetic classification task.
 */
export class Playground {
    free(): void;
    [Symbol.dispose](): void;
    hidden_sizes(): Uint32Array;
    constructor(hidden: number, seed: number);
    /**
     * Removes neurons updated in fewer than `rate` of the examples seen
     * since the last prune; returns `PruneStats` as JSON.
     */
    prune(rate: number): string;
    /**
     * `k = 0` or `k >= size` trains with full back propagation. Clears
     * the update counters.
     */
    set_k(k: number): void;
    /**
     * One pass over the training set; returns `EpochStats` as JSON.
     */
    train_epoch(): string;
}

/**
 * Uniform values in `[-1, 1)`, standing in for a gradient vector.
 */
export function random_gradient(n: number, seed: number): Float64Array;

/**
 * Indices of the `k` largest-magnitude entries, ascending.
 */
export function top_k(values: Float64Array, k: number): Uint32Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_playground_free: (a: number, b: number) => void;
    readonly playground_hidden_sizes: (a: number) => [number, number];
    readonly playground_new: (a: number, b: number) => [number, number, number];
    readonly playground_prune: (a: number, b: number) => [number, number, number, number];
    readonly playground_set_k: (a: number, b: number) => void;
    readonly playground_train_epoch: (a: number) => [number, number, number, number];
    readonly random_gradient: (a: number, b: number) => [number, number];
    readonly top_k: (a: number, b: number, c: number) => [number, number, number, number];
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
