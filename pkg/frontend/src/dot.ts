/**
 * Parser for the engine's DOT exports plus a small layered SVG renderer.
 *
 * The engine emits a constrained DOT dialect (one node or edge per line,
 * quoted identifiers, optional style="dashed" for adapter steps), so a
 * line-oriented parse is reliable and keeps the UI dependency-free.
 */

export interface DotNode {
  id: string;
  label: string;
  dashed: boolean;
}

export interface DotEdge {
  src: string;
  dst: string;
  label: string;
}

export interface DotGraph {
  nodes: DotNode[];
  edges: DotEdge[];
}

const NODE_RE = /^\s*"([^"]+)"\s*\[label="([^"]*)"(.*)\]\s*$/;
const EDGE_RE = /^\s*"([^"]+)"\s*->\s*"([^"]+)"\s*(?:\[label="([^"]*)".*\])?\s*$/;

export function parseDot(text: string): DotGraph {
  const nodes: DotNode[] = [];
  const edges: DotEdge[] = [];
  const body = text.replace(/digraph\s+\w+\s*\{/, "").replace(/\}\s*$/, "");
  const statements = body.split(/[;\n]/);
  for (const statement of statements) {
    const edge = statement.match(EDGE_RE);
    if (edge) {
      edges.push({ src: edge[1], dst: edge[2], label: edge[3] ?? "" });
      continue;
    }
    const node = statement.match(NODE_RE);
    if (node) {
      nodes.push({
        id: node[1],
        label: node[2].replace(/\\n/g, "\n"),
        dashed: node[3].includes("dashed"),
      });
    }
  }
  return { nodes, edges };
}

/** Longest-path layering: every node sits one column right of its deepest producer. */
export function layerNodes(graph: DotGraph): Map<string, number> {
  const incoming = new Map<string, string[]>();
  for (const node of graph.nodes) incoming.set(node.id, []);
  for (const edge of graph.edges) incoming.get(edge.dst)?.push(edge.src);

  const layers = new Map<string, number>();
  const visiting = new Set<string>();

  const depth = (id: string): number => {
    const known = layers.get(id);
    if (known !== undefined) return known;
    if (visiting.has(id)) return 0; // defensive: cycles render flat
    visiting.add(id);
    const producers = incoming.get(id) ?? [];
    const layer = producers.length === 0 ? 0 : Math.max(...producers.map(depth)) + 1;
    visiting.delete(id);
    layers.set(id, layer);
    return layer;
  };

  for (const node of graph.nodes) depth(node.id);
  return layers;
}

export interface DagRenderOptions {
  columnWidth?: number;
  rowHeight?: number;
  boxWidth?: number;
  boxHeight?: number;
}

export function renderDagSvg(graph: DotGraph, options: DagRenderOptions = {}): string {
  const colW = options.columnWidth ?? 190;
  const rowH = options.rowHeight ?? 74;
  const boxW = options.boxWidth ?? 168;
  const boxH = options.boxHeight ?? 46;

  const layers = layerNodes(graph);
  const byLayer = new Map<number, DotNode[]>();
  for (const node of graph.nodes) {
    const layer = layers.get(node.id) ?? 0;
    if (!byLayer.has(layer)) byLayer.set(layer, []);
    byLayer.get(layer)!.push(node);
  }
  const position = new Map<string, { x: number; y: number }>();
  let maxRow = 0;
  for (const [layer, nodes] of [...byLayer.entries()].sort((a, b) => a[0] - b[0])) {
    nodes.sort((a, b) => a.id.localeCompare(b.id));
    nodes.forEach((node, row) => {
      position.set(node.id, { x: 16 + layer * colW, y: 16 + row * rowH });
      maxRow = Math.max(maxRow, row);
    });
  }
  const width = 32 + colW * (Math.max(...[0, ...byLayer.keys()]) + 1);
  const height = 32 + rowH * (maxRow + 1);

  const parts: string[] = [];
  parts.push(
    `<svg class="dag" viewBox="0 0 ${width} ${height}" xmlns="http://www.w3.org/2000/svg">`,
    `<defs><marker id="arrow" viewBox="0 0 10 10" refX="9" refY="5" markerWidth="7" markerHeight="7" orient="auto-start-reverse"><path d="M 0 0 L 10 5 L 0 10 z" fill="#5b6770"/></marker></defs>`,
  );
  for (const edge of graph.edges) {
    const a = position.get(edge.src);
    const b = position.get(edge.dst);
    if (!a || !b) continue;
    const x1 = a.x + boxW;
    const y1 = a.y + boxH / 2;
    const x2 = b.x;
    const y2 = b.y + boxH / 2;
    const mid = (x1 + x2) / 2;
    parts.push(
      `<path class="edge" d="M ${x1} ${y1} C ${mid} ${y1}, ${mid} ${y2}, ${x2} ${y2}" marker-end="url(#arrow)"/>`,
    );
    if (edge.label) {
      parts.push(
        `<text class="edge-label" x="${mid}" y="${(y1 + y2) / 2 - 5}">${escapeXml(edge.label)}</text>`,
      );
    }
  }
  for (const node of graph.nodes) {
    const at = position.get(node.id)!;
    const dash = node.dashed ? ` stroke-dasharray="6 3"` : "";
    const [title, subtitle] = node.label.split("\n");
    parts.push(
      `<g class="node${node.dashed ? " adapter" : ""}" data-node="${escapeXml(node.id)}">`,
      `<rect x="${at.x}" y="${at.y}" width="${boxW}" height="${boxH}" rx="6"${dash}/>`,
      `<text x="${at.x + 8}" y="${at.y + 19}" class="node-title">${escapeXml(title ?? node.id)}</text>`,
      subtitle
        ? `<text x="${at.x + 8}" y="${at.y + 36}" class="node-sub">${escapeXml(subtitle)}</text>`
        : "",
      `</g>`,
    );
  }
  parts.push("</svg>");
  return parts.filter(Boolean).join("");
}

export function escapeXml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}
