#pragma once

#include <compare>
#include <map>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace mmas {

/// Opaque image bytes plus a format tag. The harness only decodes pixels
/// inside the perception perturbers and the image tool stubs.
struct ImagePayload {
    std::string format;  // "ppm" is the only format the bundled codec reads
    std::vector<std::uint8_t> bytes;

    bool empty() const noexcept { return bytes.empty(); }
    bool operator==(const ImagePayload&) const = default;
};

struct Rgb {
    std::uint8_t r = 0, g = 0, b = 0;
    auto operator<=>(const Rgb&) const = default;
};

class Raster {
public:
    Raster() = default;
    Raster(int width, int height, Rgb fill = {});

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    bool contains(int x, int y) const noexcept { return x >= 0 && y >= 0 && x < width_ && y < height_; }

    Rgb at(int x, int y) const;
    void set(int x, int y, Rgb c);

    const std::vector<std::uint8_t>& data() const noexcept { return rgb_; }
    bool operator==(const Raster&) const = default;

private:
    friend Raster decode_image(const ImagePayload&);
    int width_ = 0;
    int height_ = 0;
    std::vector<std::uint8_t> rgb_;
};

/// Throws Error{DecodeError} on anything that is not a well-formed binary PPM.
Raster decode_image(const ImagePayload& image);
ImagePayload encode_ppm(const Raster& raster);

inline constexpr Rgb kOverlayForeground{255, 255, 255};
inline constexpr Rgb kOverlayBackground{0, 0, 0};

/// Renders `text` (upper-cased; unsupported glyphs become '?') into a
/// background band anchored at the top-left corner. Glyph cells are 6x7
/// font units, with one unit of padding around the band; scale multiplies
/// every unit. Text that does not fit is clipped.
void draw_text_overlay(Raster& raster, std::string_view text, int scale,
                       Rgb fg = kOverlayForeground, Rgb bg = kOverlayBackground);

/// Inverse of draw_text_overlay for an unclipped band; returns "" when no
/// band is present.
std::string read_overlay_text(const Raster& raster, Rgb fg = kOverlayForeground,
                              Rgb bg = kOverlayBackground);

void fill_region(Raster& raster, int x, int y, int w, int h, Rgb color);

/// Pixel count per palette color (nearest entry).
std::map<std::string, std::size_t> color_histogram(const Raster& raster);

/// Most frequent named color, each pixel snapped to the nearest palette
/// entry. Ties break toward the lexicographically smaller name.
std::string dominant_color_name(const Raster& raster);

std::optional<Rgb> color_from_name(std::string_view name);

/// Every character the bundled font can render.
std::string_view font_charset();

}  // namespace mmas
