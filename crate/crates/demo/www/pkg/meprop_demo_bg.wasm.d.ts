/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_playground_free: (a: number, b: number) => void;
export const playground_hidden_sizes: (a: number) => [number, number];
export const playground_new: (a: number, b: number) => [number, number, number];
export const playground_prune: (a: number, b: number) => [number, number, number, number];
export const playground_set_k: (a: number, b: number) => void;
export const playground_train_epoch: (a: number) => [number, number, number, number];
export const random_gradient: (a: number, b: number) => [number, number];
export const top_k: (a: number, b: number, c: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_start: () => void;
