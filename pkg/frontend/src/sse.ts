/** Incremental parser for a server-sent-event byte stream.
 *
 * Feed arbitrary text chunks; complete `event:`/`data:` blocks (separated
 * by a blank line) fire the callback in arrival order. Chunk boundaries
 * may fall anywhere, including inside a field line.
 */

export interface SseEvent {
  event: string;
  data: string;
}

export function createSseParser(onEvent: (ev: SseEvent) => void): (chunk: string) => void {
  let buffer = "";
  return (chunk: string) => {
    buffer += chunk;
    let sep: number;
    while ((sep = buffer.indexOf("\n\n")) >= 0) {
      const block = buffer.slice(0, sep);
      buffer = buffer.slice(sep + 2);
      let event = "message";
      const dataLines: string[] = [];
      for (const line of block.split("\n")) {
        if (line.startsWith("event:")) {
          event = line.slice(6).trim();
        } else if (line.startsWith("data:")) {
          dataLines.push(line.slice(5).trim());
        }
      }
      if (dataLines.length > 0) {
        onEvent({ event, data: dataLines.join("\n") });
      }
    }
  };
}
