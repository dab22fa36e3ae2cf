import { describe, expect, it } from "vitest";

import { createSseParser, type SseEvent } from "./sse.js";

function collect(): { events: SseEvent[]; feed: (chunk: string) => void } {
  const events: SseEvent[] = [];
  const feed = createSseParser((ev) => events.push(ev));
  return { events, feed };
}

describe("sse parser", () => {
  it("parses a complete block", () => {
    const { events, feed } = collect();
    feed('event: frame\ndata: {"t":1}\n\n');
    expect(events).toEqual([{ event: "frame", data: '{"t":1}' }]);
  });

  it("handles chunk boundaries inside lines", () => {
    const { events, feed } = collect();
    feed("event: fra");
    feed('me\ndata: {"t"');
    expect(events).toHaveLength(0);
    feed(": 2}\n\n");
    expect(events).toEqual([{ event: "frame", data: '{"t": 2}' }]);
  });

  it("emits multiple events from one chunk in order", () => {
    const { events, feed } = collect();
    feed("event: frame\ndata: 1\n\nevent: frame\ndata: 2\n\nevent: done\ndata: 3\n\n");
    expect(events.map((e) => e.event)).toEqual(["frame", "frame", "done"]);
    expect(events.map((e) => e.data)).toEqual(["1", "2", "3"]);
  });

  it("ignores blocks without data", () => {
    const { events, feed } = collect();
    feed("event: ping\n\n");
    expect(events).toHaveLength(0);
  });
});
