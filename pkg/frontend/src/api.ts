// Thin client for the manipulation service endpoints.

export interface ViewUpload {
  image_png_b64: string;
  pose: { azimuth: number; elevation: number };
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ServiceClient {
  constructor(
    public baseUrl: string,
    private fetcher: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private url(path: string): string {
    return this.baseUrl.replace(/\/$/, "") + path;
  }

  async health(): Promise<boolean> {
    try {
      const res = await this.fetcher(this.url("/healthz"));
      return res.ok;
    } catch {
      return false;
    }
  }

  async models(): Promise<string[]> {
    const res = await this.fetcher(this.url("/models"));
    if (!res.ok) throw new Error(`GET /models failed: ${res.status}`);
    return (await res.json()).models;
  }

  async createSession(model: string, views: ViewUpload[]): Promise<string> {
    const res = await this.fetcher(this.url("/session"), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ model, views }),
    });
    if (!res.ok) throw new Error(`POST /session failed: ${res.status} ${await res.text()}`);
    return (await res.json()).session_id;
  }

  async decode(sessionId: string, body: unknown): Promise<Blob> {
    const res = await this.fetcher(this.url(`/session/${sessionId}/decode`), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!res.ok) throw new Error(`decode failed: ${res.status} ${await res.text()}`);
    return await res.blob();
  }

  meshUrl(sessionId: string, threshold: number): string {
    return this.url(`/session/${sessionId}/mesh?threshold=${threshold}`);
  }

  async mesh(sessionId: string, threshold: number): Promise<string> {
    const res = await this.fetcher(this.meshUrl(sessionId, threshold));
    if (!res.ok) throw new Error(`mesh failed: ${res.status}`);
    return await res.text();
  }
}
