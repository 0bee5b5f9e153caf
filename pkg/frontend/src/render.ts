// Canvas painter for the draw list. Coordinates are screen-normalized
// [0,1]^2 with y up; the painter flips to canvas pixels.

import { DrawOp } from "./view.js";

export function paint(ctx: CanvasRenderingContext2D, ops: DrawOp[]): void {
  const w = ctx.canvas.width;
  const h = ctx.canvas.height;
  const px = (p: [number, number]): [number, number] => [p[0] * w, (1 - p[1]) * h];
  const scale = Math.min(w, h);

  ctx.clearRect(0, 0, w, h);
  ctx.fillStyle = "#10141c";
  ctx.fillRect(0, 0, w, h);

  for (const op of ops) {
    switch (op.kind) {
      case "band": {
        ctx.strokeStyle = op.style;
        ctx.lineWidth = 2 * op.radius * scale;
        ctx.lineJoin = "round";
        ctx.beginPath();
        op.points.forEach((p, i) => {
          const [x, y] = px(p);
          if (i === 0) ctx.moveTo(x, y);
          else ctx.lineTo(x, y);
        });
        ctx.closePath();
        ctx.stroke();
        break;
      }
      case "polyline": {
        ctx.strokeStyle = op.style;
        ctx.lineWidth = 1.5;
        ctx.beginPath();
        op.points.forEach((p, i) => {
          const [x, y] = px(p);
          if (i === 0) ctx.moveTo(x, y);
          else ctx.lineTo(x, y);
        });
        if (op.closed) ctx.closePath();
        ctx.stroke();
        break;
      }
      case "circle": {
        const [x, y] = px(op.center);
        ctx.beginPath();
        ctx.arc(x, y, op.radius * scale, 0, 2 * Math.PI);
        if (op.fill) {
          ctx.fillStyle = op.style;
          ctx.fill();
        } else {
          ctx.strokeStyle = op.style;
          ctx.lineWidth = 1.5;
          ctx.stroke();
        }
        break;
      }
      case "trail": {
        for (const q of op.points) {
          const alpha = Math.max(0, 1 - q.age_s);
          const [x, y] = px(q.p);
          ctx.globalAlpha = alpha * 0.6;
          ctx.fillStyle = op.style;
          ctx.beginPath();
          ctx.arc(x, y, 0.004 * scale, 0, 2 * Math.PI);
          ctx.fill();
        }
        ctx.globalAlpha = 1;
        break;
      }
      case "text": {
        const [x, y] = px(op.anchor);
        ctx.fillStyle = op.style;
        ctx.font = `${Math.round(0.022 * scale)}px system-ui, sans-serif`;
        ctx.fillText(op.text, x, y);
        break;
      }
    }
  }
}
