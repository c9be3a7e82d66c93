/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_scene_free: (a: number, b: number) => void;
export const action_names: () => [number, number];
export const heatmap_size: () => number;
export const image_size: () => number;
export const probe_decode: (a: number, b: number, c: number) => [number, number, number, number];
export const scene_action: (a: number) => [number, number];
export const scene_decode_errors: (a: number, b: number) => [number, number, number, number];
export const scene_heatmap_rgba: (a: number, b: number) => [number, number, number, number];
export const scene_image_rgba: (a: number) => [number, number];
export const scene_joints_px: (a: number) => [number, number];
export const scene_new: (a: number, b: number, c: number) => [number, number, number];
export const scene_noise_metrics: (a: number, b: number, c: number) => [number, number, number, number];
export const scene_rotations: (a: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_drop_slice: (a: number, b: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_start: () => void;
