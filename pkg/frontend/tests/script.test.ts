import { describe, expect, it } from "vitest";

import {
  Edit,
  ManipState,
  decodeBody,
  defaultPose,
  exportScript,
  importScript,
  parseScript,
  scaleEntries,
  serializeEdits,
} from "../src/script.js";

const sampleEdits: Edit[] = [
  { kind: "stretch", axis: "y", a: -0.5, b: 0.5, enabled: true },
  { kind: "twist", alpha: 30, splitY: 0.1, enabled: true },
  { kind: "reflect", axis: "z", keep: "-", enabled: true },
  { kind: "rigid", azimuth: 15, elevation: -4, translation: [0.1, 0, 0], enabled: true },
];

describe("script serialization", () => {
  it("round-trips losslessly through the flow-spec JSON", () => {
    const script = serializeEdits(sampleEdits);
    const back = parseScript(script);
    expect(serializeEdits(back)).toEqual(script);
    expect(back).toEqual(sampleEdits);
  });

  it("export then import reproduces the same decode request", () => {
    const state: ManipState = { sessionId: "s", edits: sampleEdits, pose: defaultPose() };
    const exported = exportScript(state);
    const reimported = importScript(state, exported);
    expect(decodeBody(reimported)).toEqual(decodeBody(state));
  });

  it("empty edit list exports as []", () => {
    const state: ManipState = { sessionId: null, edits: [], pose: defaultPose() };
    expect(exportScript(state)).toBe("[]");
  });

  it("disabled edits are excluded from the script", () => {
    const edits: Edit[] = [
      { kind: "twist", alpha: 45, splitY: 0, enabled: false },
      { kind: "stretch", axis: "x", a: -1, b: 1, enabled: true },
    ];
    const script = serializeEdits(edits);
    expect(script).toHaveLength(1);
    expect(script[0].type).toBe("stretch");
  });

  it("a zero-angle twist still serializes explicitly (service treats it as identity)", () => {
    const script = serializeEdits([{ kind: "twist", alpha: 0, splitY: 0.4, enabled: true }]);
    expect(script).toEqual([{ type: "twist", alpha: 0, split_y: 0.4 }]);
  });

  it("rejects unknown entry types on import", () => {
    const state: ManipState = { sessionId: null, edits: [], pose: defaultPose() };
    expect(() => importScript(state, JSON.stringify([{ type: "wobble" }]))).toThrow(/unknown/);
  });

  it("scale 1 adds no entries; other scales stretch all axes", () => {
    expect(scaleEntries(1)).toEqual([]);
    const entries = scaleEntries(2);
    expect(entries).toHaveLength(3);
    for (const e of entries) {
      expect(e.type).toBe("stretch");
      expect(e.a).toBeCloseTo(-0.5);
      expect(e.b).toBeCloseTo(0.5);
    }
  });

  it("pose travels in the decode body, not in the script", () => {
    const state: ManipState = {
      sessionId: "s",
      edits: [],
      pose: { azimuth: 90, elevation: 10, translation: [0, 0.2, 0], scale: 1 },
    };
    const body = decodeBody(state);
    expect(body.script).toEqual([]);
    expect(body.pose).toEqual({ azimuth: 90, elevation: 10, translation: [0, 0.2, 0] });
  });
});
