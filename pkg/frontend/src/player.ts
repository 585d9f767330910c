import type { ClipPlayer } from "./types.js";

/**
 * Web Audio playback that resolves when the decoded buffer ends, so the
 * round loop never advances before a clip has played to completion.
 */
export class WebAudioPlayer implements ClipPlayer {
  private context: AudioContext | null = null;

  private ensureContext(): AudioContext {
    if (!this.context) {
      this.context = new AudioContext();
    }
    return this.context;
  }

  async play(data: ArrayBuffer): Promise<void> {
    const context = this.ensureContext();
    const buffer = await context.decodeAudioData(data.slice(0));
    await new Promise<void>((resolve) => {
      const source = context.createBufferSource();
      source.buffer = buffer;
      source.connect(context.destination);
      source.onended = () => resolve();
      source.start();
    });
  }
}
