#include "probing/plots.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <memory>
#include <variant>

#include <fmt/format.h>
#include <png.h>

#include "probing/error.hpp"
#include "probing/io.hpp"

namespace probing {

namespace fs = std::filesystem;

namespace {

struct Color {
  std::uint8_t r = 0, g = 0, b = 0;
  std::string hex() const { return fmt::format("#{:02x}{:02x}{:02x}", r, g, b); }
};

constexpr Color kBlack{0, 0, 0};
constexpr Color kGrey{200, 200, 200};
constexpr Color kWhite{255, 255, 255};
constexpr std::array<Color, 10> kPalette{{{31, 119, 180},
                                          {255, 127, 14},
                                          {44, 160, 44},
                                          {214, 39, 40},
                                          {148, 103, 189},
                                          {140, 86, 75},
                                          {227, 119, 194},
                                          {127, 127, 127},
                                          {188, 189, 34},
                                          {23, 190, 207}}};

enum class Anchor { START, MIDDLE, END };

struct Line { double x1, y1, x2, y2; Color c; double w; };
struct Rect { double x, y, w, h; Color fill; bool stroke; };
struct Dot { double x, y, r; Color c; };
struct Text { double x, y; std::string s; Color c; Anchor a; bool vertical; };

// 5x7 glyphs, one byte per row, bit 4 leftmost. Lower case is drawn as upper.
const std::array<std::uint8_t, 7>* glyph(char ch) {
  static const std::pair<char, std::array<std::uint8_t, 7>> table[] = {
      {'0', {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}},
      {'1', {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E}},
      {'2', {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}},
      {'3', {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E}},
      {'4', {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}},
      {'5', {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E}},
      {'6', {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}},
      {'7', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
      {'8', {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}},
      {'9', {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}},
      {'A', {0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
      {'B', {0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E}},
      {'C', {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E}},
      {'D', {0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C}},
      {'E', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F}},
      {'F', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10}},
      {'G', {0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F}},
      {'H', {0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
      {'I', {0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}},
      {'J', {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C}},
      {'K', {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11}},
      {'L', {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F}},
      {'M', {0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11}},
      {'N', {0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11}},
      {'O', {0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}},
      {'P', {0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10}},
      {'Q', {0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D}},
      {'R', {0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11}},
      {'S', {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E}},
      {'T', {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04}},
      {'U', {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}},
      {'V', {0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04}},
      {'W', {0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A}},
      {'X', {0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11}},
      {'Y', {0x11, 0x11, 0x11, 0x0A, 0x04, 0x04, 0x04}},
      {'Z', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F}},
      {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C}},
      {',', {0x00, 0x00, 0x00, 0x00, 0x0C, 0x04, 0x08}},
      {'-', {0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00}},
      {'_', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F}},
      {'/', {0x00, 0x01, 0x02, 0x04, 0x08, 0x10, 0x00}},
      {':', {0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00}},
      {'(', {0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02}},
      {')', {0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08}},
      {'+', {0x00, 0x04, 0x04, 0x1F, 0x04, 0x04, 0x00}},
      {'=', {0x00, 0x00, 0x1F, 0x00, 0x1F, 0x00, 0x00}},
      {'%', {0x18, 0x19, 0x02, 0x04, 0x08, 0x13, 0x03}},
      {'#', {0x0A, 0x0A, 0x1F, 0x0A, 0x1F, 0x0A, 0x0A}},
      {'<', {0x02, 0x04, 0x08, 0x10, 0x08, 0x04, 0x02}},
      {'>', {0x08, 0x04, 0x02, 0x01, 0x02, 0x04, 0x08}},
      {'?', {0x0E, 0x11, 0x01, 0x02, 0x04, 0x00, 0x04}},
  };
  if (ch == ' ') return nullptr;
  if (ch >= 'a' && ch <= 'z') ch = static_cast<char>(ch - 'a' + 'A');
  for (const auto& [c, rows] : table)
    if (c == ch) return &rows;
  return glyph('?');
}

constexpr int kGlyphAdvance = 6;

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

class Canvas {
 public:
  Canvas(int w, int h) : w_(w), h_(h) {}

  void line(double x1, double y1, double x2, double y2, Color c, double w = 1) {
    ops_.emplace_back(Line{x1, y1, x2, y2, c, w});
  }
  void rect(double x, double y, double w, double h, Color fill, bool stroke = false) {
    ops_.emplace_back(Rect{x, y, w, h, fill, stroke});
  }
  void dot(double x, double y, double r, Color c) { ops_.emplace_back(Dot{x, y, r, c}); }
  void text(double x, double y, std::string s, Color c = kBlack, Anchor a = Anchor::START,
            bool vertical = false) {
    ops_.emplace_back(Text{x, y, std::move(s), c, a, vertical});
  }

  std::string svg() const;
  std::string png() const;

 private:
  int w_, h_;
  std::vector<std::variant<Line, Rect, Dot, Text>> ops_;
};

std::string Canvas::svg() const {
  std::string out = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" "
      "viewBox=\"0 0 {} {}\" font-family=\"monospace\" font-size=\"10\">\n"
      "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n",
      w_, h_, w_, h_);
  for (const auto& op : ops_) {
    if (auto* l = std::get_if<Line>(&op)) {
      out += fmt::format(
          "<line x1=\"{:.2f}\" y1=\"{:.2f}\" x2=\"{:.2f}\" y2=\"{:.2f}\" stroke=\"{}\" "
          "stroke-width=\"{}\"/>\n",
          l->x1, l->y1, l->x2, l->y2, l->c.hex(), l->w);
    } else if (auto* r = std::get_if<Rect>(&op)) {
      out += fmt::format(
          "<rect x=\"{:.2f}\" y=\"{:.2f}\" width=\"{:.2f}\" height=\"{:.2f}\" fill=\"{}\"{}/>\n",
          r->x, r->y, r->w, r->h, r->fill.hex(), r->stroke ? " stroke=\"#000000\"" : "");
    } else if (auto* d = std::get_if<Dot>(&op)) {
      out += fmt::format("<circle cx=\"{:.2f}\" cy=\"{:.2f}\" r=\"{}\" fill=\"{}\"/>\n", d->x,
                         d->y, d->r, d->c.hex());
    } else if (auto* t = std::get_if<Text>(&op)) {
      const char* anchor = t->a == Anchor::START    ? "start"
                           : t->a == Anchor::MIDDLE ? "middle"
                                                    : "end";
      std::string rot;
      if (t->vertical) rot = fmt::format(" transform=\"rotate(-90 {:.2f} {:.2f})\"", t->x, t->y);
      out += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" fill=\"{}\" text-anchor=\"{}\"{}>{}</text>\n",
                         t->x, t->y, t->c.hex(), anchor, rot, xml_escape(t->s));
    }
  }
  out += "</svg>\n";
  return out;
}

class Raster {
 public:
  Raster(int w, int h) : w_(w), h_(h), px_(static_cast<std::size_t>(w) * h * 3, 255) {}

  void set(int x, int y, Color c) {
    if (x < 0 || y < 0 || x >= w_ || y >= h_) return;
    auto* p = &px_[(static_cast<std::size_t>(y) * w_ + x) * 3];
    p[0] = c.r;
    p[1] = c.g;
    p[2] = c.b;
  }
  void fill(double x0, double y0, double x1, double y1, Color c) {
    for (int y = static_cast<int>(std::floor(y0)); y < static_cast<int>(std::ceil(y1)); ++y)
      for (int x = static_cast<int>(std::floor(x0)); x < static_cast<int>(std::ceil(x1)); ++x)
        set(x, y, c);
  }
  void disk(double cx, double cy, double r, Color c) {
    for (int y = static_cast<int>(std::floor(cy - r)); y <= static_cast<int>(std::ceil(cy + r)); ++y)
      for (int x = static_cast<int>(std::floor(cx - r)); x <= static_cast<int>(std::ceil(cx + r));
           ++x)
        if ((x + 0.5 - cx) * (x + 0.5 - cx) + (y + 0.5 - cy) * (y + 0.5 - cy) <= r * r + 0.25)
          set(x, y, c);
  }
  void segment(const Line& l) {
    const double len = std::hypot(l.x2 - l.x1, l.y2 - l.y1);
    const int steps = std::max(1, static_cast<int>(len * 2));
    for (int i = 0; i <= steps; ++i) {
      const double t = static_cast<double>(i) / steps;
      disk(l.x1 + t * (l.x2 - l.x1), l.y1 + t * (l.y2 - l.y1), std::max(0.5, l.w / 2), l.c);
    }
  }
  void text(const Text& t) {
    const int width = static_cast<int>(t.s.size()) * kGlyphAdvance;
    const int shift = t.a == Anchor::START ? 0 : t.a == Anchor::MIDDLE ? width / 2 : width;
    // baseline at t.y, glyph body 7 pixels above it
    for (std::size_t i = 0; i < t.s.size(); ++i) {
      const auto* g = glyph(t.s[i]);
      if (!g) continue;
      const int ox = static_cast<int>(i) * kGlyphAdvance - shift;
      for (int row = 0; row < 7; ++row)
        for (int col = 0; col < 5; ++col) {
          if (!((*g)[row] & (0x10 >> col))) continue;
          const int u = ox + col, v = row - 7;
          if (t.vertical)
            set(static_cast<int>(t.x) + v, static_cast<int>(t.y) - u, t.c);
          else
            set(static_cast<int>(t.x) + u, static_cast<int>(t.y) + v, t.c);
        }
    }
  }
  std::string encode() const;

 private:
  int w_, h_;
  std::vector<std::uint8_t> px_;
};

std::string Raster::encode() const {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw Error("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  std::string out;
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("PNG encoding failed");
  }
  png_set_write_fn(
      png, &out,
      [](png_structp p, png_bytep data, png_size_t n) {
        static_cast<std::string*>(png_get_io_ptr(p))->append(reinterpret_cast<char*>(data), n);
      },
      nullptr);
  png_set_IHDR(png, info, w_, h_, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < h_; ++y)
    png_write_row(png, const_cast<png_bytep>(&px_[static_cast<std::size_t>(y) * w_ * 3]));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

std::string Canvas::png() const {
  Raster r(w_, h_);
  for (const auto& op : ops_) {
    if (auto* l = std::get_if<Line>(&op)) {
      r.segment(*l);
    } else if (auto* rc = std::get_if<Rect>(&op)) {
      r.fill(rc->x, rc->y, rc->x + rc->w, rc->y + rc->h, rc->fill);
      if (rc->stroke) {
        r.segment({rc->x, rc->y, rc->x + rc->w, rc->y, kBlack, 1});
        r.segment({rc->x, rc->y + rc->h, rc->x + rc->w, rc->y + rc->h, kBlack, 1});
        r.segment({rc->x, rc->y, rc->x, rc->y + rc->h, kBlack, 1});
        r.segment({rc->x + rc->w, rc->y, rc->x + rc->w, rc->y + rc->h, kBlack, 1});
      }
    } else if (auto* d = std::get_if<Dot>(&op)) {
      r.disk(d->x, d->y, d->r, d->c);
    } else if (auto* t = std::get_if<Text>(&op)) {
      r.text(*t);
    }
  }
  return r.encode();
}

std::vector<fs::path> emit(const Canvas& c, const fs::path& stem) {
  auto svg = stem;
  svg += ".svg";
  auto png = stem;
  png += ".png";
  write_atomic(svg, c.svg());
  write_atomic(png, c.png());
  return {svg, png};
}

// Tick positions at 1, 2 or 5 times a power of ten.
std::vector<double> nice_ticks(double lo, double hi, int target = 6) {
  if (!(hi > lo)) return {lo};
  const double raw = (hi - lo) / target;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 5.0, 10.0})
    if (m * mag >= raw) {
      step = m * mag;
      break;
    }
  std::vector<double> ticks;
  const double tol = step * 1e-6;
  for (long i = static_cast<long>(std::ceil((lo - tol) / step)); i * step <= hi + tol; ++i)
    ticks.push_back(i == 0 ? 0.0 : i * step);
  return ticks;
}

std::string tick_label(double v) { return fmt::format("{:.3g}", v); }

struct Frame {
  double left = 70, top = 34, right, bottom;
  double x0, x1, y0, y1;
  double px(double x) const { return left + (x - x0) / (x1 - x0) * (right - left); }
  double py(double y) const { return bottom - (y - y0) / (y1 - y0) * (bottom - top); }
};

void axes(Canvas& c, const Frame& f, const std::string& title, const std::string& xl,
          const std::string& yl, bool x_ticks, bool integer_x) {
  c.text((f.left + f.right) / 2, 18, title, kBlack, Anchor::MIDDLE);
  for (double t : nice_ticks(f.y0, f.y1)) {
    c.line(f.left, f.py(t), f.right, f.py(t), kGrey);
    c.text(f.left - 6, f.py(t) + 3, tick_label(t), kBlack, Anchor::END);
  }
  if (x_ticks) {
    auto ticks = nice_ticks(f.x0, f.x1, 12);
    if (integer_x) {
      std::erase_if(ticks, [](double t) { return std::abs(t - std::round(t)) > 1e-6; });
      for (double& t : ticks) t = std::round(t);
    }
    for (double t : ticks) {
      c.line(f.px(t), f.bottom, f.px(t), f.bottom + 4, kBlack);
      c.text(f.px(t), f.bottom + 16, tick_label(t), kBlack, Anchor::MIDDLE);
    }
  }
  c.line(f.left, f.bottom, f.right, f.bottom, kBlack);
  c.line(f.left, f.top, f.left, f.bottom, kBlack);
  c.text((f.left + f.right) / 2, f.bottom + 32, xl, kBlack, Anchor::MIDDLE);
  c.text(16, (f.top + f.bottom) / 2, yl, kBlack, Anchor::MIDDLE, true);
}

void legend(Canvas& c, const std::vector<std::string>& names, double x, double y) {
  for (std::size_t i = 0; i < names.size(); ++i) {
    const Color col = kPalette[i % kPalette.size()];
    c.rect(x, y + 14.0 * i - 7, 10, 8, col);
    c.text(x + 14, y + 14.0 * i, names[i]);
  }
}

std::pair<double, double> value_range(const std::vector<const std::vector<double>*>& ys) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto* v : ys)
    for (double y : *v)
      if (std::isfinite(y)) {
        lo = std::min(lo, y);
        hi = std::max(hi, y);
      }
  if (!std::isfinite(lo)) return {0, 1};
  if (lo > 0 && lo < 0.5 * hi) lo = 0;
  if (hi == lo) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double pad = 0.05 * (hi - lo);
  return {lo - pad, hi + pad};
}

}  // namespace

std::vector<fs::path> render(const LineChart& chart, const fs::path& stem) {
  if (chart.series.empty()) throw ValidationError("line chart '" + chart.title + "' has no series");
  Canvas c(720, 420);
  Frame f;
  f.right = 540;
  f.bottom = 370;
  f.x0 = std::numeric_limits<double>::infinity();
  f.x1 = -f.x0;
  std::vector<const std::vector<double>*> ys;
  std::vector<std::string> names;
  for (const auto& s : chart.series) {
    if (s.x.size() != s.y.size())
      throw ValidationError("series '" + s.name + "' has mismatched x and y");
    for (double x : s.x) {
      f.x0 = std::min(f.x0, x);
      f.x1 = std::max(f.x1, x);
    }
    ys.push_back(&s.y);
    names.push_back(s.name);
  }
  if (!std::isfinite(f.x0)) f.x0 = 0, f.x1 = 1;
  if (f.x1 == f.x0) f.x0 -= 1, f.x1 += 1;
  std::tie(f.y0, f.y1) = value_range(ys);
  axes(c, f, chart.title, chart.x_label, chart.y_label, true, chart.integer_x);
  if (f.y0 < 0 && f.y1 > 0) c.line(f.left, f.py(0), f.right, f.py(0), kBlack);

  for (std::size_t i = 0; i < chart.series.size(); ++i) {
    const auto& s = chart.series[i];
    const Color col = kPalette[i % kPalette.size()];
    for (std::size_t j = 0; j + 1 < s.x.size(); ++j)
      if (std::isfinite(s.y[j]) && std::isfinite(s.y[j + 1]))
        c.line(f.px(s.x[j]), f.py(s.y[j]), f.px(s.x[j + 1]), f.py(s.y[j + 1]), col, 2);
    for (std::size_t j = 0; j < s.x.size(); ++j)
      if (std::isfinite(s.y[j])) c.dot(f.px(s.x[j]), f.py(s.y[j]), 3, col);
  }
  legend(c, names, f.right + 16, f.top + 8);
  return emit(c, stem);
}

std::vector<fs::path> render(const BarChart& chart, const fs::path& stem) {
  if (chart.categories.empty() || chart.groups.empty())
    throw ValidationError("bar chart '" + chart.title + "' is empty");
  const double slot = std::max(24.0, 12.0 * chart.groups.size() + 8);
  const int width = static_cast<int>(70 + slot * chart.categories.size() + 200);
  Canvas c(std::max(width, 480), 420);
  Frame f;
  f.right = 70 + slot * chart.categories.size();
  f.bottom = 350;
  f.x0 = 0;
  f.x1 = static_cast<double>(chart.categories.size());
  std::vector<const std::vector<double>*> ys;
  std::vector<std::string> names;
  for (const auto& g : chart.groups) {
    if (g.y.size() != chart.categories.size())
      throw ValidationError("bar group '" + g.name + "' does not match the categories");
    ys.push_back(&g.y);
    names.push_back(g.name);
  }
  std::tie(f.y0, f.y1) = value_range(ys);
  f.y0 = std::min(f.y0, 0.0);
  axes(c, f, chart.title, "", chart.y_label, false, false);
  const double bar = (slot - 8) / chart.groups.size();
  for (std::size_t k = 0; k < chart.categories.size(); ++k) {
    const double base = f.left + slot * k + 4;
    for (std::size_t g = 0; g < chart.groups.size(); ++g) {
      const double v = chart.groups[g].y[k];
      if (!std::isfinite(v)) continue;
      const double top = f.py(std::max(v, 0.0)), bot = f.py(std::min(v, 0.0));
      c.rect(base + bar * g, top, bar, bot - top, kPalette[g % kPalette.size()]);
    }
    c.text(base + slot / 2 - 4, f.bottom + 10, chart.categories[k], kBlack, Anchor::END, true);
  }
  legend(c, names, f.right + 16, f.top + 8);
  return emit(c, stem);
}

std::vector<fs::path> render(const Heatmap& chart, const fs::path& stem) {
  const auto n = chart.rows.size(), m = chart.cols.size();
  if (n == 0 || m == 0) throw ValidationError("heatmap '" + chart.title + "' is empty");
  if (chart.values.size() != n) throw ValidationError("heatmap rows do not match values");
  double hi = 0;
  for (const auto& row : chart.values) {
    if (row.size() != m) throw ValidationError("heatmap columns do not match values");
    for (double v : row)
      if (std::isfinite(v)) hi = std::max(hi, v);
  }
  const double cell = std::clamp(480.0 / std::max(n, m), 12.0, 40.0);
  const double left = 90, top = 40;
  Canvas c(static_cast<int>(left + cell * m + 30), static_cast<int>(top + cell * n + 90));
  c.text(left + cell * m / 2, 20, chart.title, kBlack, Anchor::MIDDLE);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      const double v = chart.values[i][j];
      const double t = hi > 0 && std::isfinite(v) ? v / hi : 0;
      const Color col{static_cast<std::uint8_t>(255 - t * (255 - 8)),
                      static_cast<std::uint8_t>(255 - t * (255 - 48)),
                      static_cast<std::uint8_t>(255 - t * (255 - 107))};
      c.rect(left + cell * j, top + cell * i, cell, cell, col);
      if (cell >= 28 && std::isfinite(v) && v != 0)
        c.text(left + cell * (j + 0.5), top + cell * (i + 0.5) + 3, tick_label(v),
               t > 0.5 ? kWhite : kBlack, Anchor::MIDDLE);
    }
    c.text(left - 6, top + cell * (i + 0.5) + 3, chart.rows[i], kBlack, Anchor::END);
  }
  for (std::size_t j = 0; j < m; ++j)
    c.text(left + cell * (j + 0.5) + 3, top + cell * n + 6, chart.cols[j], kBlack, Anchor::END,
           true);
  c.text(12, top + cell * n / 2, chart.row_label, kBlack, Anchor::MIDDLE, true);
  c.text(left + cell * m / 2, top + cell * n + 80, chart.col_label, kBlack, Anchor::MIDDLE);
  return emit(c, stem);
}

}  // namespace probing
