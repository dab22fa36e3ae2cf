/** Typed client for the inference service's HTTP/SSE API. */

import { createSseParser } from "./sse.js";
import type {
  DoneEvent,
  FrameEvent,
  InferenceRequest,
  InferResponse,
  ModelMeta,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    message: string,
    readonly status: number,
  ) {
    super(message);
  }
}

async function raiseFor(resp: Response): Promise<void> {
  if (!resp.ok) {
    let detail = resp.statusText;
    try {
      const body = await resp.json();
      detail = typeof body.detail === "string" ? body.detail : JSON.stringify(body.detail);
    } catch {
      // non-JSON error body; keep the status text
    }
    throw new ApiError(detail, resp.status);
  }
}

export class ServiceClient {
  constructor(readonly baseUrl: string = "") {}

  async modelMeta(): Promise<ModelMeta> {
    const resp = await fetch(`${this.baseUrl}/v1/model`);
    await raiseFor(resp);
    return (await resp.json()) as ModelMeta;
  }

  async infer(req: InferenceRequest): Promise<InferResponse> {
    const resp = await fetch(`${this.baseUrl}/v1/infer`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(req),
    });
    await raiseFor(resp);
    return (await resp.json()) as InferResponse;
  }

  /** Stream progressive frames; resolves with the final summary event. */
  async stream(
    req: InferenceRequest,
    onFrame: (frame: FrameEvent) => void,
    signal?: AbortSignal,
  ): Promise<DoneEvent | null> {
    const resp = await fetch(`${this.baseUrl}/v1/infer/stream`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ ...req, progressive: true }),
      signal,
    });
    await raiseFor(resp);
    if (!resp.body) {
      throw new ApiError("streaming response has no body", resp.status);
    }
    let done: DoneEvent | null = null;
    const parse = createSseParser((ev) => {
      if (ev.event === "frame") {
        onFrame(JSON.parse(ev.data) as FrameEvent);
      } else if (ev.event === "done") {
        done = JSON.parse(ev.data) as DoneEvent;
      }
    });
    const reader = resp.body.getReader();
    const decoder = new TextDecoder();
    for (;;) {
      const { value, done: eof } = await reader.read();
      if (eof) {
        break;
      }
      parse(decoder.decode(value, { stream: true }));
    }
    return done;
  }
}
