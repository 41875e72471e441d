/** Server-side SVG rendering via the echarts SSR mode. */

import * as echarts from "echarts";
import type { EChartsOption } from "echarts";

export function renderSvg(
  option: EChartsOption,
  width = 800,
  height = 500,
): string {
  const chart = echarts.init(null, null, {
    renderer: "svg",
    ssr: true,
    width,
    height,
  });
  try {
    chart.setOption({ animation: false, ...option });
    return chart.renderToSVGString();
  } finally {
    chart.dispose();
  }
}
