#include "mmas/image.hpp"

#include "mmas/error.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <map>

namespace mmas {

namespace {

struct Glyph {
    char ch;
    std::array<std::uint8_t, 7> rows;  // bit 4 is the leftmost column
};

// clang-format off
constexpr Glyph kFont[] = {
    {' ', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00}},
    {'A', {0b01110, 0b10001, 0b10001, 0b11111, 0b10001, 0b10001, 0b10001}},
    {'B', {0b11110, 0b10001, 0b10001, 0b11110, 0b10001, 0b10001, 0b11110}},
    {'C', {0b01110, 0b10001, 0b10000, 0b10000, 0b10000, 0b10001, 0b01110}},
    {'D', {0b11110, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b11110}},
    {'E', {0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b11111}},
    {'F', {0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b10000}},
    {'G', {0b01110, 0b10001, 0b10000, 0b10111, 0b10001, 0b10001, 0b01111}},
    {'H', {0b10001, 0b10001, 0b10001, 0b11111, 0b10001, 0b10001, 0b10001}},
    {'I', {0b01110, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110}},
    {'J', {0b00111, 0b00010, 0b00010, 0b00010, 0b00010, 0b10010, 0b01100}},
    {'K', {0b10001, 0b10010, 0b10100, 0b11000, 0b10100, 0b10010, 0b10001}},
    {'L', {0b10000, 0b10000, 0b10000, 0b10000, 0b10000, 0b10000, 0b11111}},
    {'M', {0b10001, 0b11011, 0b10101, 0b10101, 0b10001, 0b10001, 0b10001}},
    {'N', {0b10001, 0b10001, 0b11001, 0b10101, 0b10011, 0b10001, 0b10001}},
    {'O', {0b01110, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01110}},
    {'P', {0b11110, 0b10001, 0b10001, 0b11110, 0b10000, 0b10000, 0b10000}},
    {'Q', {0b01110, 0b10001, 0b10001, 0b10001, 0b10101, 0b10010, 0b01101}},
    {'R', {0b11110, 0b10001, 0b10001, 0b11110, 0b10100, 0b10010, 0b10001}},
    {'S', {0b01111, 0b10000, 0b10000, 0b01110, 0b00001, 0b00001, 0b11110}},
    {'T', {0b11111, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100}},
    {'U', {0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01110}},
    {'V', {0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01010, 0b00100}},
    {'W', {0b10001, 0b10001, 0b10001, 0b10101, 0b10101, 0b10101, 0b01010}},
    {'X', {0b10001, 0b10001, 0b01010, 0b00100, 0b01010, 0b10001, 0b10001}},
    {'Y', {0b10001, 0b10001, 0b10001, 0b01010, 0b00100, 0b00100, 0b00100}},
    {'Z', {0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b10000, 0b11111}},
    {'0', {0b01110, 0b10001, 0b10011, 0b10101, 0b11001, 0b10001, 0b01110}},
    {'1', {0b00100, 0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110}},
    {'2', {0b01110, 0b10001, 0b00001, 0b00010, 0b00100, 0b01000, 0b11111}},
    {'3', {0b11111, 0b00010, 0b00100, 0b00010, 0b00001, 0b10001, 0b01110}},
    {'4', {0b00010, 0b00110, 0b01010, 0b10010, 0b11111, 0b00010, 0b00010}},
    {'5', {0b11111, 0b10000, 0b11110, 0b00001, 0b00001, 0b10001, 0b01110}},
    {'6', {0b00110, 0b01000, 0b10000, 0b11110, 0b10001, 0b10001, 0b01110}},
    {'7', {0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b01000, 0b01000}},
    {'8', {0b01110, 0b10001, 0b10001, 0b01110, 0b10001, 0b10001, 0b01110}},
    {'9', {0b01110, 0b10001, 0b10001, 0b01111, 0b00001, 0b00010, 0b01100}},
    {'.', {0b00000, 0b00000, 0b00000, 0b00000, 0b00000, 0b01100, 0b01100}},
    {',', {0b00000, 0b00000, 0b00000, 0b00000, 0b01100, 0b00100, 0b01000}},
    {'!', {0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b00000, 0b00100}},
    {'?', {0b01110, 0b10001, 0b00001, 0b00010, 0b00100, 0b00000, 0b00100}},
    {'\'', {0b01100, 0b00100, 0b01000, 0b00000, 0b00000, 0b00000, 0b00000}},
    {'-', {0b00000, 0b00000, 0b00000, 0b11111, 0b00000, 0b00000, 0b00000}},
    {':', {0b00000, 0b01100, 0b01100, 0b00000, 0b01100, 0b01100, 0b00000}},
    {'/', {0b00001, 0b00001, 0b00010, 0b00100, 0b01000, 0b10000, 0b10000}},
};
// clang-format on

constexpr int kGlyphW = 5;
constexpr int kGlyphH = 7;
constexpr int kCellW = kGlyphW + 1;
constexpr int kBandH = kGlyphH + 2;

const Glyph& glyph_for(char c) {
    char up = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    for (const auto& g : kFont) {
        if (g.ch == up) return g;
    }
    for (const auto& g : kFont) {
        if (g.ch == '?') return g;
    }
    return kFont[0];
}

struct NamedColor {
    const char* name;
    Rgb rgb;
};

constexpr NamedColor kPalette[] = {
    {"black", {0, 0, 0}},       {"blue", {0, 0, 255}},      {"brown", {139, 69, 19}},
    {"gray", {128, 128, 128}},  {"green", {0, 160, 0}},     {"orange", {255, 140, 0}},
    {"pink", {255, 150, 200}},  {"purple", {128, 0, 128}},  {"red", {220, 20, 20}},
    {"white", {255, 255, 255}}, {"yellow", {255, 230, 0}},
};

int distance2(Rgb a, Rgb b) {
    int dr = int(a.r) - b.r, dg = int(a.g) - b.g, db = int(a.b) - b.b;
    return dr * dr + dg * dg + db * db;
}

// Skips whitespace and '#' comments in a PPM header.
std::size_t skip_ws(const std::vector<std::uint8_t>& b, std::size_t i) {
    while (i < b.size()) {
        if (b[i] == '#') {
            while (i < b.size() && b[i] != '\n') ++i;
        } else if (std::isspace(b[i])) {
            ++i;
        } else {
            break;
        }
    }
    return i;
}

int read_int(const std::vector<std::uint8_t>& b, std::size_t& i) {
    i = skip_ws(b, i);
    if (i >= b.size() || !std::isdigit(b[i])) throw Error(ErrorCode::DecodeError, "malformed PPM header");
    long v = 0;
    while (i < b.size() && std::isdigit(b[i])) {
        v = v * 10 + (b[i] - '0');
        if (v > 1 << 16) throw Error(ErrorCode::DecodeError, "PPM dimension too large");
        ++i;
    }
    return static_cast<int>(v);
}

}  // namespace

Raster::Raster(int width, int height, Rgb fill) : width_(width), height_(height) {
    if (width < 0 || height < 0) throw Error(ErrorCode::InvalidInput, "negative raster size");
    rgb_.resize(static_cast<std::size_t>(width) * height * 3);
    for (std::size_t i = 0; i < rgb_.size(); i += 3) {
        rgb_[i] = fill.r;
        rgb_[i + 1] = fill.g;
        rgb_[i + 2] = fill.b;
    }
}

Rgb Raster::at(int x, int y) const {
    auto i = (static_cast<std::size_t>(y) * width_ + x) * 3;
    return {rgb_[i], rgb_[i + 1], rgb_[i + 2]};
}

void Raster::set(int x, int y, Rgb c) {
    if (!contains(x, y)) return;
    auto i = (static_cast<std::size_t>(y) * width_ + x) * 3;
    rgb_[i] = c.r;
    rgb_[i + 1] = c.g;
    rgb_[i + 2] = c.b;
}

Raster decode_image(const ImagePayload& image) {
    if (image.format != "ppm") throw Error(ErrorCode::DecodeError, "unsupported image format '" + image.format + "'");
    const auto& b = image.bytes;
    if (b.size() < 2 || b[0] != 'P' || b[1] != '6') throw Error(ErrorCode::DecodeError, "missing P6 magic");
    std::size_t i = 2;
    int w = read_int(b, i);
    int h = read_int(b, i);
    int maxval = read_int(b, i);
    if (maxval != 255) throw Error(ErrorCode::DecodeError, "only 8-bit PPM is supported");
    if (i >= b.size() || !std::isspace(b[i])) throw Error(ErrorCode::DecodeError, "malformed PPM header");
    ++i;
    std::size_t need = static_cast<std::size_t>(w) * h * 3;
    if (b.size() - i != need) throw Error(ErrorCode::DecodeError, "PPM pixel data has wrong length");
    Raster r;
    r.width_ = w;
    r.height_ = h;
    r.rgb_.assign(b.begin() + static_cast<std::ptrdiff_t>(i), b.end());
    return r;
}

ImagePayload encode_ppm(const Raster& raster) {
    std::string header = "P6\n" + std::to_string(raster.width()) + " " + std::to_string(raster.height()) + "\n255\n";
    ImagePayload out{"ppm", {header.begin(), header.end()}};
    out.bytes.insert(out.bytes.end(), raster.data().begin(), raster.data().end());
    return out;
}

void draw_text_overlay(Raster& raster, std::string_view text, int scale, Rgb fg, Rgb bg) {
    if (text.empty() || scale <= 0) return;
    const int s = scale;
    const int band_w = s * (kCellW * static_cast<int>(text.size()) + 1);
    const int band_h = s * kBandH;
    fill_region(raster, 0, 0, band_w, band_h, bg);
    for (std::size_t k = 0; k < text.size(); ++k) {
        const Glyph& g = glyph_for(text[k]);
        const int ox = s + static_cast<int>(k) * kCellW * s;
        for (int row = 0; row < kGlyphH; ++row) {
            for (int col = 0; col < kGlyphW; ++col) {
                if (!((g.rows[row] >> (kGlyphW - 1 - col)) & 1)) continue;
                fill_region(raster, ox + col * s, s + row * s, s, s, fg);
            }
        }
    }
}

std::string read_overlay_text(const Raster& raster, Rgb fg, Rgb bg) {
    if (raster.width() == 0 || raster.height() == 0) return {};
    int run = 0;
    while (run < raster.height() && raster.at(0, run) == bg) ++run;
    if (run == 0 || run % kBandH != 0) return {};
    const int s = run / kBandH;
    std::string out;
    for (int k = 0;; ++k) {
        const int ox = s + k * kCellW * s;
        if (ox + kCellW * s > raster.width()) break;
        std::array<std::uint8_t, 7> rows{};
        bool valid = true;
        for (int row = 0; row < kGlyphH && valid; ++row) {
            for (int col = 0; col < kGlyphW; ++col) {
                Rgb px = raster.at(ox + col * s + s / 2, s + row * s + s / 2);
                if (px == fg) {
                    rows[row] |= static_cast<std::uint8_t>(1 << (kGlyphW - 1 - col));
                } else if (!(px == bg)) {
                    valid = false;
                    break;
                }
            }
            // the inter-glyph gap column must be background
            if (valid && !(raster.at(ox + kGlyphW * s + s / 2, s + row * s + s / 2) == bg)) valid = false;
        }
        if (!valid) break;
        const Glyph* match = nullptr;
        for (const auto& g : kFont) {
            if (g.rows == rows) match = &g;
        }
        if (!match) break;
        out.push_back(match->ch);
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    return out;
}

void fill_region(Raster& raster, int x, int y, int w, int h, Rgb color) {
    const int x0 = std::max(0, x), y0 = std::max(0, y);
    const int x1 = std::min(raster.width(), x + w), y1 = std::min(raster.height(), y + h);
    for (int yy = y0; yy < y1; ++yy) {
        for (int xx = x0; xx < x1; ++xx) raster.set(xx, yy, color);
    }
}

std::map<std::string, std::size_t> color_histogram(const Raster& raster) {
    std::map<std::string, std::size_t> counts;
    for (int y = 0; y < raster.height(); ++y) {
        for (int x = 0; x < raster.width(); ++x) {
            const Rgb px = raster.at(x, y);
            const NamedColor* best = &kPalette[0];
            for (const auto& c : kPalette) {
                if (distance2(px, c.rgb) < distance2(px, best->rgb)) best = &c;
            }
            ++counts[best->name];
        }
    }
    return counts;
}

std::string dominant_color_name(const Raster& raster) {
    std::string winner;
    std::size_t top = 0;
    for (const auto& [name, n] : color_histogram(raster)) {
        if (n > top) {
            top = n;
            winner = name;
        }
    }
    return winner;
}

std::optional<Rgb> color_from_name(std::string_view name) {
    for (const auto& c : kPalette) {
        if (name == c.name) return c.rgb;
    }
    return std::nullopt;
}

std::string_view font_charset() {
    static const std::string chars = [] {
        std::string s;
        for (const auto& g : kFont) s.push_back(g.ch);
        return s;
    }();
    return chars;
}

}  // namespace mmas
