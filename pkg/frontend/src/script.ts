// Edit-list state and its lossless mapping to the service's flow-spec JSON.

export type Axis = "x" | "y" | "z";
export type ReflectAxis = "x" | "z";
export type KeepSide = "+" | "-";

export interface StretchEdit {
  kind: "stretch";
  axis: Axis;
  a: number;
  b: number;
  enabled: boolean;
}

export interface TwistEdit {
  kind: "twist";
  alpha: number;
  splitY: number;
  enabled: boolean;
}

export interface ReflectEdit {
  kind: "reflect";
  axis: ReflectAxis;
  keep: KeepSide;
  enabled: boolean;
}

export interface RigidEdit {
  kind: "rigid";
  azimuth: number;
  elevation: number;
  translation: [number, number, number];
  enabled: boolean;
}

export type Edit = StretchEdit | TwistEdit | ReflectEdit | RigidEdit;

export interface PoseState {
  azimuth: number;
  elevation: number;
  translation: [number, number, number];
  scale: number;
}

export type ScriptEntry = Record<string, unknown> & { type: string };

export interface ManipState {
  sessionId: string | null;
  edits: Edit[];
  pose: PoseState;
}

export function defaultPose(): PoseState {
  return { azimuth: 0, elevation: 0, translation: [0, 0, 0], scale: 1 };
}

export function serializeEdits(edits: Edit[]): ScriptEntry[] {
  const script: ScriptEntry[] = [];
  for (const edit of edits) {
    if (!edit.enabled) continue;
    switch (edit.kind) {
      case "stretch":
        script.push({ type: "stretch", axis: edit.axis, a: edit.a, b: edit.b });
        break;
      case "twist":
        script.push({ type: "twist", alpha: edit.alpha, split_y: edit.splitY });
        break;
      case "reflect":
        script.push({ type: "reflect", axis: edit.axis, keep: edit.keep });
        break;
      case "rigid":
        script.push({
          type: "rigid",
          azimuth: edit.azimuth,
          elevation: edit.elevation,
          translation: edit.translation,
        });
        break;
    }
  }
  return script;
}

export function parseScript(entries: ScriptEntry[]): Edit[] {
  return entries.map((entry) => {
    switch (entry.type) {
      case "stretch":
        return {
          kind: "stretch",
          axis: entry.axis as Axis,
          a: Number(entry.a),
          b: Number(entry.b),
          enabled: true,
        } satisfies StretchEdit;
      case "twist":
        return {
          kind: "twist",
          alpha: Number(entry.alpha),
          splitY: Number(entry.split_y ?? 0),
          enabled: true,
        } satisfies TwistEdit;
      case "reflect":
        return {
          kind: "reflect",
          axis: (entry.axis ?? "x") as ReflectAxis,
          keep: (entry.keep ?? "+") as KeepSide,
          enabled: true,
        } satisfies ReflectEdit;
      case "rigid":
        return {
          kind: "rigid",
          azimuth: Number(entry.azimuth ?? 0),
          elevation: Number(entry.elevation ?? 0),
          translation: (entry.translation ?? [0, 0, 0]) as [number, number, number],
          enabled: true,
        } satisfies RigidEdit;
      default:
        throw new Error(`unknown script entry type: ${entry.type}`);
    }
  });
}

// The scale slider maps to a uniform stretch of all three axes, applied after
// the user's edits (sampling [-1/s, 1/s] shows the content s times larger).
export function scaleEntries(scale: number): ScriptEntry[] {
  if (scale === 1) return [];
  const reach = 1 / scale;
  return (["x", "y", "z"] as Axis[]).map((axis) => ({
    type: "stretch",
    axis,
    a: -reach,
    b: reach,
  }));
}

export function decodeBody(state: ManipState): {
  script: ScriptEntry[];
  pose: { azimuth: number; elevation: number; translation: [number, number, number] };
} {
  return {
    script: [...serializeEdits(state.edits), ...scaleEntries(state.pose.scale)],
    pose: {
      azimuth: state.pose.azimuth,
      elevation: state.pose.elevation,
      translation: state.pose.translation,
    },
  };
}

export function exportScript(state: ManipState): string {
  return JSON.stringify(serializeEdits(state.edits), null, 2);
}

export function importScript(state: ManipState, text: string): ManipState {
  const parsed = JSON.parse(text);
  if (!Array.isArray(parsed)) throw new Error("script must be a JSON list");
  return { ...state, edits: parseScript(parsed as ScriptEntry[]) };
}
