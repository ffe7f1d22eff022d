#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "avr/factor_space.hpp"

namespace avr {

struct Rgb {
    std::uint8_t r = 0, g = 0, b = 0;
    friend bool operator==(const Rgb&, const Rgb&) = default;
};

/// 8-bit RGB raster, row-major, no alpha.
class Image {
public:
    Image(int width, int height, Rgb fill = {});

    [[nodiscard]] int width() const { return width_; }
    [[nodiscard]] int height() const { return height_; }
    [[nodiscard]] Rgb at(int x, int y) const;
    void set(int x, int y, Rgb c);
    [[nodiscard]] std::span<const std::uint8_t> bytes() const { return data_; }

    /// Copies `src` with its top-left corner at (x0, y0); clipped to this image.
    void blit(const Image& src, int x0, int y0);
    void fill_rect(int x0, int y0, int w, int h, Rgb c);

    friend bool operator==(const Image&, const Image&) = default;

private:
    int width_;
    int height_;
    std::vector<std::uint8_t> data_;
};

inline constexpr int kPanelSize = 64;

/// HSL to 8-bit RGB; hue in degrees, saturation and lightness in [0, 1].
Rgb hsl_to_rgb(double hue_deg, double saturation, double lightness);

/// Object colour used for hue-valued factors.
inline constexpr double kObjectSaturation = 0.9;
inline constexpr double kObjectLightness = 0.55;

/// Deterministic 64x64 panel for an assignment in a dsprites_* or shapes3d_* space.
Image render_panel(const FactorSpace& space, const FactorAssignment& a);

/// Background colour of a dsprites panel (the bg_shade grey).
Rgb dsprites_background(const FactorSpace& space, const FactorAssignment& a);

struct SheetLayout {
    static constexpr int kMargin = 4;
    static constexpr int kGap = 12;
    static constexpr int kWidth = 6 * kPanelSize + 7 * kMargin;
    static constexpr int kHeight = kMargin + 3 * kPanelSize + 2 * kMargin + kGap + kPanelSize + kMargin;
    static constexpr Rgb kCanvas{255, 255, 255};
    static constexpr Rgb kBlank{224, 224, 224};

    /// Top-left corner of context cell (row, col), 0-based.
    static std::array<int, 2> context_origin(int row, int col);
    static std::array<int, 2> answer_origin(int j);
};

/// 3x3 context grid (bottom-right cell blank) above a strip of 6 answers.
/// Expects 8 context panels then 6 answer panels.
Image compose_task_sheet(std::span<const Image> context, std::span<const Image> answers);

/// Encodes as an 8-bit RGB PNG (deterministic byte stream).
std::vector<std::uint8_t> encode_png(const Image& img);
void write_png(const Image& img, const std::filesystem::path& path);

}  // namespace avr
