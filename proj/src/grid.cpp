#include "iconify/grid.hpp"

#include <algorithm>
#include <string>

namespace iconify {

Image render_contact_sheet(const std::vector<std::vector<Image>>& rows, const GridLayout& layout) {
  std::size_t cols = 0;
  const Image* first = nullptr;
  for (const auto& row : rows) {
    cols = std::max(cols, row.size());
    if (!first && !row.empty()) first = &row.front();
  }
  if (!first) throw GridError("grid: no images");
  const std::size_t tw = first->width, th = first->height;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].empty()) throw GridError("grid: row " + std::to_string(r) + " is empty");
    for (const auto& img : rows[r]) {
      if (img.width != tw || img.height != th) {
        throw GridError("grid: image of " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                        " in row " + std::to_string(r) + " differs from " + std::to_string(tw) + "x" +
                        std::to_string(th));
      }
    }
  }

  const std::size_t n = rows.size();
  Image sheet(2 * layout.border + cols * tw + (cols - 1) * layout.gutter,
              2 * layout.border + n * th + (n - 1) * layout.gutter, kWhite);
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t y0 = layout.border + r * (th + layout.gutter);
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      const std::size_t x0 = layout.border + c * (tw + layout.gutter);
      const Image& img = rows[r][c];
      for (std::size_t y = 0; y < th; ++y) {
        std::copy_n(img.pixels.begin() + static_cast<std::ptrdiff_t>(y * tw * 3), tw * 3,
                    sheet.pixels.begin() + static_cast<std::ptrdiff_t>(((y0 + y) * sheet.width + x0) * 3));
      }
    }
  }
  return sheet;
}

}  // namespace iconify
