#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

#include "iconify/image.hpp"

namespace iconify {

class GridError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct GridLayout {
  std::size_t border = 2;
  std::size_t gutter = 2;
};

/// Tiles equally sized images row by row on white. Width is
/// 2 border + cols tile + (cols - 1) gutter, height likewise; short rows are
/// left white on the right.
Image render_contact_sheet(const std::vector<std::vector<Image>>& rows, const GridLayout& layout = {});

}  // namespace iconify
