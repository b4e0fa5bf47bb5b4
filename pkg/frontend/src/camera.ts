/**
 * Orbit camera. The pose is recomposed from (target, distance, yaw, pitch)
 * on every read — never integrated incrementally — so the rotation sent to
 * the server is orthonormal to floating-point precision.
 */

export interface Intrinsics {
  fx: number;
  fy: number;
  cx: number;
  cy: number;
  width: number;
  height: number;
}

export interface CameraState {
  target: [number, number, number];
  distance: number;
  yaw: number;   // radians about the world y axis
  pitch: number; // radians, clamped short of the poles
}

const PITCH_LIMIT = Math.PI / 2 - 1e-3;

export class OrbitCamera {
  state: CameraState;
  intrinsics: Intrinsics;

  constructor(intrinsics: Intrinsics, state?: Partial<CameraState>) {
    this.intrinsics = { ...intrinsics };
    this.state = {
      target: [0, 0, 0],
      distance: 3,
      yaw: 0,
      pitch: 0,
      ...state,
    };
  }

  /** Initialize from the server's default camera (world-to-camera pose). */
  static fromPose(pose: number[], intrinsics: Intrinsics): OrbitCamera {
    const R = [
      [pose[0], pose[1], pose[2]],
      [pose[4], pose[5], pose[6]],
      [pose[8], pose[9], pose[10]],
    ];
    const t = [pose[3], pose[7], pose[11]];
    // camera center c = -R^T t
    const c: [number, number, number] = [
      -(R[0][0] * t[0] + R[1][0] * t[1] + R[2][0] * t[2]),
      -(R[0][1] * t[0] + R[1][1] * t[1] + R[2][1] * t[2]),
      -(R[0][2] * t[0] + R[1][2] * t[1] + R[2][2] * t[2]),
    ];
    // view direction = third row of R (camera z in world coordinates)
    const fwd = [R[2][0], R[2][1], R[2][2]];
    const distance = 3;
    const target: [number, number, number] = [
      c[0] + fwd[0] * distance,
      c[1] + fwd[1] * distance,
      c[2] + fwd[2] * distance,
    ];
    const yaw = Math.atan2(fwd[0], fwd[2]);
    const pitch = Math.asin(Math.max(-1, Math.min(1, -fwd[1])));
    return new OrbitCamera(intrinsics, { target, distance, yaw, pitch });
  }

  orbit(dYaw: number, dPitch: number): void {
    this.state.yaw += dYaw;
    this.state.pitch = Math.max(-PITCH_LIMIT,
      Math.min(PITCH_LIMIT, this.state.pitch + dPitch));
  }

  dolly(factor: number): void {
    this.state.distance = Math.max(1e-3, this.state.distance * factor);
  }

  pan(dx: number, dy: number): void {
    // move the target in the camera's right/up plane
    const { right, up } = this.axes();
    const s = this.state.distance;
    for (let i = 0; i < 3; i++) {
      this.state.target[i] += s * (dx * right[i] + dy * up[i]);
    }
  }

  private axes() {
    const { yaw, pitch } = this.state;
    const cy = Math.cos(yaw), sy = Math.sin(yaw);
    const cp = Math.cos(pitch), sp = Math.sin(pitch);
    // forward: from the camera toward the target
    const forward = [sy * cp, -sp, cy * cp];
    const right = [cy, 0, -sy];
    const up = [
      right[1] * forward[2] - right[2] * forward[1],
      right[2] * forward[0] - right[0] * forward[2],
      right[0] * forward[1] - right[1] * forward[0],
    ];
    return { forward, right, up };
  }

  center(): [number, number, number] {
    const { forward } = this.axes();
    const { target, distance } = this.state;
    return [
      target[0] - forward[0] * distance,
      target[1] - forward[1] * distance,
      target[2] - forward[2] * distance,
    ];
  }

  /** Row-major 4x4 world-to-camera matrix, 16 floats. */
  pose(): number[] {
    const { forward, right, up } = this.axes();
    // world-to-camera rows: x = right, y = -up (image y grows downward),
    // z = forward
    const rows = [right, [-up[0], -up[1], -up[2]], forward];
    const c = this.center();
    const pose: number[] = [];
    for (let i = 0; i < 3; i++) {
      const r = rows[i];
      pose.push(r[0], r[1], r[2], -(r[0] * c[0] + r[1] * c[1] + r[2] * c[2]));
    }
    pose.push(0, 0, 0, 1);
    return pose;
  }
}

/** max |R R^T - I| of the rotation block of a row-major 4x4 pose. */
export function orthonormalityError(pose: number[]): number {
  const R = [
    [pose[0], pose[1], pose[2]],
    [pose[4], pose[5], pose[6]],
    [pose[8], pose[9], pose[10]],
  ];
  let worst = 0;
  for (let i = 0; i < 3; i++) {
    for (let j = 0; j < 3; j++) {
      let dot = 0;
      for (let k = 0; k < 3; k++) dot += R[i][k] * R[j][k];
      worst = Math.max(worst, Math.abs(dot - (i === j ? 1 : 0)));
    }
  }
  return worst;
}
