// Minimal server-sent-events client over fetch streaming. Works in the
// browser and under node, and keeps event order exactly as sent.

export interface SSEEvent {
  event: string;
  data: string;
}

/** Parse an SSE byte stream into events, preserving arrival order. */
export async function* parseSSE(
  stream: ReadableStream<Uint8Array>
): AsyncGenerator<SSEEvent> {
  const reader = stream.getReader();
  const decoder = new TextDecoder();
  let buffer = "";
  try {
    for (;;) {
      const { value, done } = await reader.read();
      if (done) break;
      buffer += decoder.decode(value, { stream: true });
      let cut: number;
      while ((cut = buffer.indexOf("\n\n")) >= 0) {
        const frame = buffer.slice(0, cut);
        buffer = buffer.slice(cut + 2);
        const parsed = parseFrame(frame);
        if (parsed) yield parsed;
      }
    }
    const tail = parseFrame(buffer);
    if (tail) yield tail;
  } finally {
    reader.releaseLock();
  }
}

function parseFrame(frame: string): SSEEvent | null {
  let event = "message";
  const data: string[] = [];
  for (const line of frame.split("\n")) {
    if (line.startsWith("event:")) event = line.slice(6).trim();
    else if (line.startsWith("data:")) data.push(line.slice(5).trim());
  }
  if (!data.length) return null;
  return { event, data: data.join("\n") };
}

/** Fetch an SSE endpoint and invoke a callback per event, in order. */
export async function consumeEvents(
  url: string,
  onEvent: (e: SSEEvent) => void,
  fetchImpl: typeof fetch = fetch
): Promise<void> {
  const response = await fetchImpl(url, { headers: { accept: "text/event-stream" } });
  if (!response.ok || !response.body) {
    throw new Error(`event stream failed: ${response.status}`);
  }
  for await (const event of parseSSE(response.body)) {
    onEvent(event);
  }
}
