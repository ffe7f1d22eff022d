#include "avr/render.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>

namespace avr {

Image::Image(int width, int height, Rgb fill) : width_(width), height_(height) {
    if (width <= 0 || height <= 0) throw std::invalid_argument("image dimensions must be positive");
    data_.resize(static_cast<std::size_t>(width) * height * 3);
    for (std::size_t i = 0; i < data_.size(); i += 3) {
        data_[i] = fill.r;
        data_[i + 1] = fill.g;
        data_[i + 2] = fill.b;
    }
}

Rgb Image::at(int x, int y) const {
    const auto i = (static_cast<std::size_t>(y) * width_ + x) * 3;
    return {data_.at(i), data_.at(i + 1), data_.at(i + 2)};
}

void Image::set(int x, int y, Rgb c) {
    if (x < 0 || y < 0 || x >= width_ || y >= height_) return;
    const auto i = (static_cast<std::size_t>(y) * width_ + x) * 3;
    data_[i] = c.r;
    data_[i + 1] = c.g;
    data_[i + 2] = c.b;
}

void Image::blit(const Image& src, int x0, int y0) {
    for (int y = 0; y < src.height(); ++y)
        for (int x = 0; x < src.width(); ++x) set(x0 + x, y0 + y, src.at(x, y));
}

void Image::fill_rect(int x0, int y0, int w, int h, Rgb c) {
    for (int y = y0; y < y0 + h; ++y)
        for (int x = x0; x < x0 + w; ++x) set(x, y, c);
}

namespace {

std::uint8_t to_byte(double v) {
    return static_cast<std::uint8_t>(std::clamp(std::lround(v * 255.0), 0L, 255L));
}

double hue_channel(double p, double q, double t) {
    if (t < 0) t += 1;
    if (t > 1) t -= 1;
    if (t < 1.0 / 6) return p + (q - p) * 6 * t;
    if (t < 0.5) return q;
    if (t < 2.0 / 3) return p + (q - p) * (2.0 / 3 - t) * 6;
    return p;
}

Rgb grey(double level) {
    const auto v = to_byte(level);
    return {v, v, v};
}

Rgb darken(Rgb c, double f) {
    auto d = [f](std::uint8_t v) { return static_cast<std::uint8_t>(std::lround(v * f)); };
    return {d(c.r), d(c.g), d(c.b)};
}

enum class Sprite { square, ellipse, heart };

// Coverage test at a pixel centre, in object-local units where the bounding
// half-extent is 1.
bool sprite_covers(Sprite s, double u, double v) {
    switch (s) {
        case Sprite::square: return std::abs(u) <= 1.0 && std::abs(v) <= 1.0;
        case Sprite::ellipse: return u * u + (v * v) / (0.55 * 0.55) <= 1.0;
        case Sprite::heart: {
            // (x^2 + y^2 - 1)^3 - x^2 y^3 <= 0 with y pointing up; its bounding
            // box is roughly [-1.14, 1.14] x [-1, 1.24].
            const double x = u * 1.14;
            const double y = -v * 1.12 + 0.12;
            const double r = x * x + y * y - 1.0;
            return r * r * r - x * x * y * y * y <= 0.0;
        }
    }
    return false;
}

Image render_dsprites(const FactorSpace& space, const FactorAssignment& a) {
    const auto label = [&](const char* name) {
        const auto k = space.factor_index(name);
        return space.factor(k).value_labels[a[k]];
    };
    const auto shape = static_cast<Sprite>(a[space.factor_index("shape")]);
    const double half = 12.0 * label("scale");
    const double cx = 12.0 + 40.0 * label("pos_x");
    const double cy = 12.0 + 40.0 * label("pos_y");
    const Rgb fg = hsl_to_rgb(label("obj_color"), kObjectSaturation, kObjectLightness);

    Image img(kPanelSize, kPanelSize, dsprites_background(space, a));
    for (int y = 0; y < kPanelSize; ++y)
        for (int x = 0; x < kPanelSize; ++x) {
            const double u = (x + 0.5 - cx) / half;
            const double v = (y + 0.5 - cy) / half;
            if (sprite_covers(shape, u, v)) img.set(x, y, fg);
        }
    return img;
}

enum class Solid { cube, cylinder, sphere, capsule };

Image render_shapes3d(const FactorSpace& space, const FactorAssignment& a) {
    const auto label = [&](const char* name) {
        const auto k = space.factor_index(name);
        return space.factor(k).value_labels[a[k]];
    };
    constexpr int kHorizon = 38;
    const Rgb wall = hsl_to_rgb(label("wall_hue"), 0.6, 0.72);
    const Rgb floor = hsl_to_rgb(label("floor_hue"), 0.6, 0.38);
    const Rgb body = hsl_to_rgb(label("obj_hue"), kObjectSaturation, kObjectLightness);
    const Rgb side = darken(body, 0.7);
    const Rgb top = darken(body, 0.85);

    Image img(kPanelSize, kPanelSize, wall);
    img.fill_rect(0, kHorizon, kPanelSize, kPanelSize - kHorizon, floor);

    const auto solid = static_cast<Solid>(a[space.factor_index("shape")]);
    const double scale = label("scale");
    const double azimuth = label("azimuth");  // degrees in [-30, 30]
    const double half = 9.0 * scale;
    const double base = 54.0;
    const double cx = 32.0 + azimuth / 30.0 * 10.0;
    // Side-face depth grows with |azimuth|; the face shows on the azimuth's side.
    const double depth = half * (0.25 + 0.5 * std::abs(azimuth) / 30.0);
    const double dir = azimuth >= 0 ? 1.0 : -1.0;
    const double height = 2.0 * half;

    for (int y = 0; y < kPanelSize; ++y)
        for (int x = 0; x < kPanelSize; ++x) {
            const double px = x + 0.5;
            const double py = y + 0.5;
            const double dx = px - cx;
            const double rise = base - py;  // height above the object's base
            std::optional<Rgb> c;
            switch (solid) {
                case Solid::cube: {
                    if (std::abs(dx) <= half && rise >= 0 && rise <= height) c = body;
                    // Side face: parallelogram sheared upward by `depth / 2`.
                    const double sx = dir * dx - half;
                    if (!c && sx >= 0 && sx <= depth && rise >= sx * 0.5 && rise <= height + sx * 0.5)
                        c = side;
                    // Top face.
                    const double tx = dir * dx + half;
                    const double ty = rise - height;
                    if (!c && ty >= 0 && ty <= depth * 0.5 && tx >= 2.0 * ty && tx <= 2.0 * half + 2.0 * ty)
                        c = top;
                    break;
                }
                case Solid::cylinder: {
                    const double cap = half * 0.35;
                    const double ex = dx / half;
                    if (std::abs(dx) <= half && rise >= 0 && rise <= height) c = body;
                    const double ey = (rise - height) / cap;
                    if (!c && ex * ex + ey * ey <= 1.0) c = top;
                    // Lit band shifted with the azimuth gives a readable orientation cue.
                    if (c == body && std::abs(dx - dir * depth * 0.8) <= 1.0) c = side;
                    break;
                }
                case Solid::sphere: {
                    const double dy = rise - half;
                    if (dx * dx + dy * dy <= half * half) c = body;
                    const double hx = dx - dir * depth * 0.6;
                    const double hy = dy - half * 0.35;
                    if (c && hx * hx + hy * hy <= half * half * 0.08) c = top;
                    break;
                }
                case Solid::capsule: {
                    const double r = half * 0.7;
                    const double lo = r;
                    const double hi = height + half * 0.4 - r;
                    const double cyl = std::clamp(rise, lo, hi);
                    const double dy = rise - cyl;
                    const double skew = dx - dir * (cyl - lo) * depth / (hi - lo + 1e-9) * 0.5;
                    if (skew * skew + dy * dy <= r * r) c = body;
                    break;
                }
            }
            if (c) img.set(x, y, *c);
        }
    return img;
}

void append_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

void append_chunk(std::vector<std::uint8_t>& out, const char* type, std::span<const std::uint8_t> data) {
    append_u32(out, static_cast<std::uint32_t>(data.size()));
    const auto start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    const auto crc = crc32(0L, out.data() + start, static_cast<uInt>(out.size() - start));
    append_u32(out, static_cast<std::uint32_t>(crc));
}

}  // namespace

Rgb hsl_to_rgb(double hue_deg, double saturation, double lightness) {
    const double h = std::fmod(std::fmod(hue_deg, 360.0) + 360.0, 360.0) / 360.0;
    if (saturation <= 0) return grey(lightness);
    const double q = lightness < 0.5 ? lightness * (1 + saturation)
                                     : lightness + saturation - lightness * saturation;
    const double p = 2 * lightness - q;
    return {to_byte(hue_channel(p, q, h + 1.0 / 3)), to_byte(hue_channel(p, q, h)),
            to_byte(hue_channel(p, q, h - 1.0 / 3))};
}

Rgb dsprites_background(const FactorSpace& space, const FactorAssignment& a) {
    const auto k = space.factor_index("bg_shade");
    return grey(space.factor(k).value_labels[a[k]]);
}

Image render_panel(const FactorSpace& space, const FactorAssignment& a) {
    if (!space.contains(a))
        throw std::invalid_argument("assignment does not belong to " + std::string(to_string(space.id())));
    return space.is_dsprites() ? render_dsprites(space, a) : render_shapes3d(space, a);
}

std::array<int, 2> SheetLayout::context_origin(int row, int col) {
    const int grid_w = 3 * kPanelSize + 2 * kMargin;
    const int x0 = (kWidth - grid_w) / 2;
    return {x0 + col * (kPanelSize + kMargin), kMargin + row * (kPanelSize + kMargin)};
}

std::array<int, 2> SheetLayout::answer_origin(int j) {
    const int y = kMargin + 3 * kPanelSize + 2 * kMargin + kGap;
    return {kMargin + j * (kPanelSize + kMargin), y};
}

Image compose_task_sheet(std::span<const Image> context, std::span<const Image> answers) {
    if (context.size() != 8 || answers.size() != 6)
        throw std::invalid_argument("task sheet needs 8 context and 6 answer panels, got " +
                                    std::to_string(context.size()) + " and " +
                                    std::to_string(answers.size()));
    Image sheet(SheetLayout::kWidth, SheetLayout::kHeight, SheetLayout::kCanvas);
    for (int i = 0; i < 9; ++i) {
        const auto [x, y] = SheetLayout::context_origin(i / 3, i % 3);
        if (i < 8)
            sheet.blit(context[i], x, y);
        else
            sheet.fill_rect(x, y, kPanelSize, kPanelSize, SheetLayout::kBlank);
    }
    for (int j = 0; j < 6; ++j) {
        const auto [x, y] = SheetLayout::answer_origin(j);
        sheet.blit(answers[j], x, y);
    }
    return sheet;
}

std::vector<std::uint8_t> encode_png(const Image& img) {
    std::vector<std::uint8_t> raw;
    raw.reserve(static_cast<std::size_t>(img.height()) * (img.width() * 3 + 1));
    const auto px = img.bytes();
    for (int y = 0; y < img.height(); ++y) {
        raw.push_back(0);  // filter: none
        const auto row = px.subspan(static_cast<std::size_t>(y) * img.width() * 3, img.width() * 3);
        raw.insert(raw.end(), row.begin(), row.end());
    }
    uLongf zlen = compressBound(static_cast<uLong>(raw.size()));
    std::vector<std::uint8_t> z(zlen);
    if (compress2(z.data(), &zlen, raw.data(), static_cast<uLong>(raw.size()), 9) != Z_OK)
        throw std::runtime_error("png: deflate failed");
    z.resize(zlen);

    std::vector<std::uint8_t> out{0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
    std::vector<std::uint8_t> ihdr;
    append_u32(ihdr, static_cast<std::uint32_t>(img.width()));
    append_u32(ihdr, static_cast<std::uint32_t>(img.height()));
    ihdr.insert(ihdr.end(), {8, 2, 0, 0, 0});  // 8-bit, truecolour, deflate, no filter, no interlace
    append_chunk(out, "IHDR", ihdr);
    append_chunk(out, "IDAT", z);
    append_chunk(out, "IEND", {});
    return out;
}

void write_png(const Image& img, const std::filesystem::path& path) {
    const auto bytes = encode_png(img);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace avr
