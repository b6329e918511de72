#include "monoscene/mask.hpp"

#include <bit>
#include <cmath>

namespace monoscene {

void Mask::set_row_span(int y, int x0, int x1) {
  if (y < 0 || y >= height_) return;
  x0 = std::max(x0, 0);
  x1 = std::min(x1, width_ - 1);
  if (x0 > x1) return;
  const std::size_t base = idx(y);
  const int w0 = x0 >> 6, w1 = x1 >> 6;
  const std::uint64_t first = ~0ull << (x0 & 63);
  const std::uint64_t last = ~0ull >> (63 - (x1 & 63));
  if (w0 == w1) {
    words_[base + w0] |= first & last;
    return;
  }
  words_[base + w0] |= first;
  for (int w = w0 + 1; w < w1; ++w) words_[base + w] = ~0ull;
  words_[base + w1] |= last;
}

std::size_t Mask::count() const {
  std::size_t n = 0;
  for (std::uint64_t w : words_) n += static_cast<std::size_t>(std::popcount(w));
  return n;
}

bool Mask::any() const {
  for (std::uint64_t w : words_)
    if (w) return true;
  return false;
}

void Mask::clear_all() { std::fill(words_.begin(), words_.end(), 0ull); }

bool Mask::bbox(int& x0, int& y0, int& x1, int& y1) const {
  x0 = width_;
  y0 = height_;
  x1 = -1;
  y1 = -1;
  for (int y = 0; y < height_; ++y) {
    const std::size_t base = idx(y);
    bool row_any = false;
    for (int w = 0; w < stride_; ++w) {
      const std::uint64_t bits = words_[base + w];
      if (!bits) continue;
      row_any = true;
      const int lo = (w << 6) + std::countr_zero(bits);
      const int hi = (w << 6) + 63 - std::countl_zero(bits);
      x0 = std::min(x0, lo);
      x1 = std::max(x1, hi);
    }
    if (row_any) {
      y0 = std::min(y0, y);
      y1 = y;
    }
  }
  return y1 >= 0;
}

namespace {

// OR of `src` shifted horizontally by all offsets in [-m, m], into dst.
void or_row_dilated(const std::uint64_t* src, std::uint64_t* dst, int stride, int m) {
  for (int s = -m; s <= m; ++s) {
    if (s == 0) {
      for (int w = 0; w < stride; ++w) dst[w] |= src[w];
    } else if (s > 0) {
      const int word_shift = s >> 6, bit_shift = s & 63;
      for (int w = stride - 1; w >= 0; --w) {
        std::uint64_t v = 0;
        const int j = w - word_shift;
        if (j >= 0) v = src[j] << bit_shift;
        if (bit_shift && j - 1 >= 0) v |= src[j - 1] >> (64 - bit_shift);
        dst[w] |= v;
      }
    } else {
      const int t = -s;
      const int word_shift = t >> 6, bit_shift = t & 63;
      for (int w = 0; w < stride; ++w) {
        std::uint64_t v = 0;
        const int j = w + word_shift;
        if (j < stride) v = src[j] >> bit_shift;
        if (bit_shift && j + 1 < stride) v |= src[j + 1] << (64 - bit_shift);
        dst[w] |= v;
      }
    }
  }
}

}  // namespace

Mask Mask::dilated(int radius) const {
  if (radius <= 0) return *this;
  Mask out(width_, height_);
  const int r2 = radius * radius;
  for (int dy = -radius; dy <= radius; ++dy) {
    const int mx = static_cast<int>(std::floor(std::sqrt(static_cast<double>(r2 - dy * dy))));
    for (int y = 0; y < height_; ++y) {
      const int sy = y + dy;
      if (sy < 0 || sy >= height_) continue;
      or_row_dilated(words_.data() + idx(sy), out.words_.data() + out.idx(y), stride_, mx);
    }
  }
  // Mask off padding bits past the row width.
  const int tail = width_ & 63;
  if (tail) {
    const std::uint64_t keep = ~0ull >> (64 - tail);
    for (int y = 0; y < height_; ++y) out.words_[out.idx(y) + stride_ - 1] &= keep;
  }
  return out;
}

bool Mask::intersects(const Mask& o) const {
  for (std::size_t i = 0; i < words_.size(); ++i)
    if (words_[i] & o.words_[i]) return true;
  return false;
}

std::size_t Mask::intersection_count(const Mask& o) const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < words_.size(); ++i)
    n += static_cast<std::size_t>(std::popcount(words_[i] & o.words_[i]));
  return n;
}

std::vector<std::pair<int, int>> Mask::boundary_pixels() const {
  std::vector<std::pair<int, int>> out;
  for (int y = 0; y < height_; ++y)
    for (int x = 0; x < width_; ++x) {
      if (!get(x, y)) continue;
      const bool interior = x > 0 && x + 1 < width_ && y > 0 && y + 1 < height_ &&
                            get(x - 1, y) && get(x + 1, y) && get(x, y - 1) && get(x, y + 1);
      if (!interior) out.emplace_back(x, y);
    }
  return out;
}

double mask_iou(const Mask& a, const Mask& b) {
  if (!a.same_dims(b)) fail(Errc::DimensionMismatch, "mask_iou: dimensions differ");
  std::size_t inter = 0, uni = 0;
  const auto& wa = a.words();
  const auto& wb = b.words();
  for (std::size_t i = 0; i < wa.size(); ++i) {
    inter += static_cast<std::size_t>(std::popcount(wa[i] & wb[i]));
    uni += static_cast<std::size_t>(std::popcount(wa[i] | wb[i]));
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace monoscene
