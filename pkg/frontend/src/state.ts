/** Session state helpers: request generations, debouncing, PSNR series. */

/** Monotonic request generations; frames from superseded requests are stale. */
export class RequestGate {
  private generation = 0;

  begin(): number {
    return ++this.generation;
  }

  isCurrent(gen: number): boolean {
    return gen === this.generation;
  }

  get current(): number {
    return this.generation;
  }
}

export type Timer = {
  set: (fn: () => void, ms: number) => unknown;
  clear: (handle: unknown) => void;
};

const realTimer: Timer = {
  set: (fn, ms) => setTimeout(fn, ms),
  clear: (h) => clearTimeout(h as number),
};

/** Trailing-edge debounce; rapid calls collapse to one invocation. */
export function debounce<A extends unknown[]>(
  fn: (...args: A) => void,
  ms: number,
  timer: Timer = realTimer,
): (...args: A) => void {
  let handle: unknown = null;
  return (...args: A) => {
    if (handle !== null) {
      timer.clear(handle);
    }
    handle = timer.set(() => {
      handle = null;
      fn(...args);
    }, ms);
  };
}

/** PSNR points the user has visited, keyed by T. */
export class PsnrSeries {
  private points = new Map<number, number>();

  record(t: number, psnr: number): void {
    this.points.set(t, psnr);
  }

  sorted(): Array<[number, number]> {
    return [...this.points.entries()].sort((a, b) => a[0] - b[0]);
  }

  clear(): void {
    this.points.clear();
  }
}

/** Service PSNR values are displayed to centi-dB, never recomputed. */
export function formatPsnr(psnr: number | null | undefined): string {
  if (psnr === null || psnr === undefined) {
    return "inf dB";
  }
  return `${psnr.toFixed(2)} dB`;
}

export function outputDims(
  width: number,
  height: number,
  sX: number,
  sY: number,
): { width: number; height: number } {
  return { width: Math.floor(width * sX), height: Math.floor(height * sY) };
}

/** Pre-flight check so oversize uploads never reach the service. */
export function validateUpload(
  width: number,
  height: number,
  maxPixels: number,
  type: string,
): string | null {
  if (type !== "image/png") {
    return `unsupported file type ${type || "unknown"}; accepted: image/png`;
  }
  if (width * height > maxPixels) {
    return `image has ${width * height} pixels; the service limit is ${maxPixels}`;
  }
  return null;
}
