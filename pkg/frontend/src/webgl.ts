/** WebGL2 splat renderer.
 *
 * Uses the exact same projection/cull/sort output as the software path
 * (projectSplats), then draws one instanced quad per splat back to front
 * with premultiplied alpha — algebraically the same front-to-back
 * compositing, evaluated on the GPU. Per-fragment alpha uses the shared
 * conic, skip threshold, and ceiling.
 */

import { ProjectedSplats, ALPHA_CEIL } from "./project";

const VERT = `#version 300 es
layout(location=0) in vec2 corner;      // quad corner in [-1,1]
layout(location=1) in vec2 mean2d;      // per instance, pixels
layout(location=2) in vec3 conic;
layout(location=3) in vec4 colorOpacity;
layout(location=4) in float radius;     // pixels
uniform vec2 viewport;
out vec2 vDelta;
out vec3 vConic;
out vec4 vColorOpacity;
void main() {
  vDelta = corner * radius;
  vConic = conic;
  vColorOpacity = colorOpacity;
  vec2 px = mean2d + vDelta;
  vec2 ndc = vec2(2.0 * px.x / viewport.x - 1.0, 1.0 - 2.0 * px.y / viewport.y);
  gl_Position = vec4(ndc, 0.0, 1.0);
}`;

const FRAG = `#version 300 es
precision highp float;
in vec2 vDelta;
in vec3 vConic;
in vec4 vColorOpacity;
uniform float alphaCutoff;
uniform float alphaCeil;
out vec4 outColor;
void main() {
  float power = -0.5 * (vConic.x * vDelta.x * vDelta.x
                        + vConic.z * vDelta.y * vDelta.y)
                - vConic.y * vDelta.x * vDelta.y;
  if (power > 0.0) discard;
  float a = min(vColorOpacity.w * exp(power), alphaCeil);
  if (a < alphaCutoff) discard;
  outColor = vec4(vColorOpacity.rgb * a, a);
}`;

function compile(gl: WebGL2RenderingContext, type: number, src: string): WebGLShader {
  const shader = gl.createShader(type)!;
  gl.shaderSource(shader, src);
  gl.compileShader(shader);
  if (!gl.getShaderParameter(shader, gl.COMPILE_STATUS)) {
    throw new Error(`shader compile failed: ${gl.getShaderInfoLog(shader)}`);
  }
  return shader;
}

export class WebGLRenderer {
  private gl: WebGL2RenderingContext;
  private program: WebGLProgram;
  private instanceBuffer: WebGLBuffer;
  private instanceData: Float32Array = new Float32Array(0);
  private instanceCount = 0;
  private uViewport: WebGLUniformLocation;
  private uCutoff: WebGLUniformLocation;
  private uCeil: WebGLUniformLocation;

  constructor(private canvas: HTMLCanvasElement) {
    const gl = canvas.getContext("webgl2", {
      alpha: false,
      antialias: false,
      preserveDrawingBuffer: false,
    });
    if (!gl) throw new Error("WebGL2 is not available in this browser");
    this.gl = gl;

    const program = gl.createProgram()!;
    gl.attachShader(program, compile(gl, gl.VERTEX_SHADER, VERT));
    gl.attachShader(program, compile(gl, gl.FRAGMENT_SHADER, FRAG));
    gl.linkProgram(program);
    if (!gl.getProgramParameter(program, gl.LINK_STATUS)) {
      throw new Error(`program link failed: ${gl.getProgramInfoLog(program)}`);
    }
    this.program = program;
    this.uViewport = gl.getUniformLocation(program, "viewport")!;
    this.uCutoff = gl.getUniformLocation(program, "alphaCutoff")!;
    this.uCeil = gl.getUniformLocation(program, "alphaCeil")!;

    const quad = gl.createBuffer()!;
    gl.bindBuffer(gl.ARRAY_BUFFER, quad);
    gl.bufferData(
      gl.ARRAY_BUFFER,
      new Float32Array([-1, -1, 1, -1, -1, 1, 1, 1]),
      gl.STATIC_DRAW,
    );
    gl.enableVertexAttribArray(0);
    gl.vertexAttribPointer(0, 2, gl.FLOAT, false, 0, 0);

    this.instanceBuffer = gl.createBuffer()!;
    gl.bindBuffer(gl.ARRAY_BUFFER, this.instanceBuffer);
    const stride = 10 * 4;
    gl.enableVertexAttribArray(1);
    gl.vertexAttribPointer(1, 2, gl.FLOAT, false, stride, 0);
    gl.vertexAttribDivisor(1, 1);
    gl.enableVertexAttribArray(2);
    gl.vertexAttribPointer(2, 3, gl.FLOAT, false, stride, 8);
    gl.vertexAttribDivisor(2, 1);
    gl.enableVertexAttribArray(3);
    gl.vertexAttribPointer(3, 4, gl.FLOAT, false, stride, 20);
    gl.vertexAttribDivisor(3, 1);
    gl.enableVertexAttribArray(4);
    gl.vertexAttribPointer(4, 1, gl.FLOAT, false, stride, 36);
    gl.vertexAttribDivisor(4, 1);

    gl.disable(gl.DEPTH_TEST);
    gl.enable(gl.BLEND);
    // premultiplied back-to-front: dst' = src + (1 - srcAlpha) * dst
    gl.blendFunc(gl.ONE, gl.ONE_MINUS_SRC_ALPHA);
  }

  /** Upload depth-sorted splats; drawn in reverse (back to front). */
  setSplats(splats: ProjectedSplats): void {
    const m = splats.count;
    if (this.instanceData.length < m * 10) {
      this.instanceData = new Float32Array(m * 10);
    }
    const d = this.instanceData;
    for (let k = 0; k < m; k++) {
      const src = m - 1 - k; // reverse: farthest first
      d[10 * k] = splats.means2d[2 * src];
      d[10 * k + 1] = splats.means2d[2 * src + 1];
      d[10 * k + 2] = splats.conic[3 * src];
      d[10 * k + 3] = splats.conic[3 * src + 1];
      d[10 * k + 4] = splats.conic[3 * src + 2];
      d[10 * k + 5] = splats.color[3 * src];
      d[10 * k + 6] = splats.color[3 * src + 1];
      d[10 * k + 7] = splats.color[3 * src + 2];
      d[10 * k + 8] = splats.opacity[src];
      d[10 * k + 9] = splats.radius[src];
    }
    const gl = this.gl;
    gl.bindBuffer(gl.ARRAY_BUFFER, this.instanceBuffer);
    gl.bufferData(gl.ARRAY_BUFFER, d.subarray(0, m * 10), gl.DYNAMIC_DRAW);
    this.instanceCount = m;
  }

  draw(alphaCutoff: number): void {
    const gl = this.gl;
    gl.viewport(0, 0, this.canvas.width, this.canvas.height);
    gl.clearColor(0, 0, 0, 1);
    gl.clear(gl.COLOR_BUFFER_BIT);
    if (this.instanceCount === 0) return;
    gl.useProgram(this.program);
    gl.uniform2f(this.uViewport, this.canvas.width, this.canvas.height);
    gl.uniform1f(this.uCutoff, alphaCutoff);
    gl.uniform1f(this.uCeil, ALPHA_CEIL);
    gl.drawArraysInstanced(gl.TRIANGLE_STRIP, 0, 4, this.instanceCount);
  }
}
