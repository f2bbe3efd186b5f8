// WebSocket client for the steering service. Instructions sent while
// disconnected buffer locally and flush on reconnect.

import { instructionMessage, parseMessage, WireMessage } from "./protocol.js";
import { ViewEvent } from "./state.js";

export interface SteeringSocket {
  readonly readyState: number;
  send(data: string): void;
  close(): void;
  onopen: ((ev?: unknown) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: string }) => void) | null;
}

export type SocketFactory = (url: string) => SteeringSocket;

export class SteeringClient {
  private socket: SteeringSocket | null = null;
  private outSeq = 0;
  private buffered: WireMessage[] = [];
  private dispatch: (event: ViewEvent) => void;
  private factory: SocketFactory;

  constructor(dispatch: (event: ViewEvent) => void, factory?: SocketFactory) {
    this.dispatch = dispatch;
    this.factory = factory ?? ((url) => new WebSocket(url) as unknown as SteeringSocket);
  }

  connect(url: string): void {
    this.dispatch({ type: "connection", status: "connecting" });
    const socket = this.factory(url);
    this.socket = socket;
    socket.onopen = () => {
      this.dispatch({ type: "connection", status: "open" });
      for (const msg of this.buffered.splice(0)) {
        socket.send(JSON.stringify(msg));
      }
    };
    socket.onclose = () => {
      this.dispatch({ type: "connection", status: "closed" });
    };
    socket.onmessage = (ev) => {
      const msg = parseMessage(ev.data);
      if (msg) this.dispatch({ type: "message", message: msg });
    };
  }

  get connected(): boolean {
    return this.socket !== null && this.socket.readyState === 1;
  }

  get bufferedCount(): number {
    return this.buffered.length;
  }

  /** Send an instruction (or preview request); buffer it when offline. */
  submit(text: string, preview: boolean): void {
    this.outSeq += 1;
    const msg = instructionMessage(text, preview, this.outSeq);
    this.dispatch({ type: "submit", text, preview });
    if (this.connected && this.socket) {
      this.socket.send(JSON.stringify(msg));
    } else {
      this.buffered.push(msg);
    }
  }
}
