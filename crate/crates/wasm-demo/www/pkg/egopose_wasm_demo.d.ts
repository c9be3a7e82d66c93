/* tslint:disable */
/* eslint-disable */

/**
 * A sampled pose and its fisheye projection.
 */
export class Scene {
    free(): void;
    [Symbol.dispose](): void;
    decode_errors(sigma: number): Float64Array;
    heatmap_rgba(sigma: number): Uint8Array;
    image_rgba(): Uint8Array;
    joints_px(): Float64Array;
    constructor(seed: number, action: number, tilt_deg: number);
    noise_metrics(sigma_mm: number, seed: number): Float64Array;
    /**
     * Local joint rotations, 16 × (w, x, y, z).
     */
    rotations(): Float64Array;
    readonly action: string;
}

export function action_names(): string[];

export function heatmap_size(): number;

export function image_size(): number;

export function probe_decode(u: number, v: number, sigma: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_scene_free: (a: number, b: number) => void;
    readonly action_names: () => [number, number];
    readonly heatmap_size: () => number;
    readonly image_size: () => number;
    readonly probe_decode: (a: number, b: number, c: number) => [number, number, number, number];
    readonly scene_action: (a: number) => [number, number];
    readonly scene_decode_errors: (a: number, b: number) => [number, number, number, number];
    readonly scene_heatmap_rgba: (a: number, b: number) => [number, number, number, number];
    readonly scene_image_rgba: (a: number) => [number, number];
    readonly scene_joints_px: (a: number) => [number, number];
    readonly scene_new: (a: number, b: number, c: number) => [number, number, number];
    readonly scene_noise_metrics: (a: number, b: number, c: number) => [number, number, number, number];
    readonly scene_rotations: (a: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_drop_slice: (a: number, b: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __externref_table_dealloc: (a: number) => void;
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
