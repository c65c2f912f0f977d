#pragma once
// Cohort / image / cell data model and per-cell measurement.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace cellcat {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Row-major 2-D grid. Used for intensity planes, label masks, binary
/// supports and floating-point working planes.
template <typename T>
struct Grid {
    using value_type = T;

    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<T> data;

    Grid() = default;
    Grid(std::size_t w, std::size_t h, T fill = T{}) : width(w), height(h), data(w * h, fill) {}

    std::size_t size() const noexcept { return data.size(); }
    bool empty() const noexcept { return data.empty(); }
    std::size_t index(std::size_t x, std::size_t y) const noexcept { return y * width + x; }

    T& operator()(std::size_t x, std::size_t y) noexcept { return data[y * width + x]; }
    const T& operator()(std::size_t x, std::size_t y) const noexcept { return data[y * width + x]; }

    template <typename U>
    bool same_shape(const Grid<U>& other) const noexcept {
        return width == other.width && height == other.height;
    }

    bool operator==(const Grid&) const = default;
};

using IntensityPlane = Grid<std::uint16_t>;
using LabelMask = Grid<std::uint32_t>;
using BinaryMask = Grid<std::uint8_t>;
using RealPlane = Grid<double>;

inline constexpr std::string_view kNegativeClass = "Negative";

struct MultiChannelImage {
    std::string image_id;
    std::vector<IntensityPlane> nuclear_rounds;  // round 0 is the segmentation round
    std::vector<IntensityPlane> markers;         // manifest marker order

    std::size_t width() const noexcept { return nuclear_rounds.empty() ? 0 : nuclear_rounds.front().width; }
    std::size_t height() const noexcept { return nuclear_rounds.empty() ? 0 : nuclear_rounds.front().height; }
    const IntensityPlane& segmentation_round() const { return nuclear_rounds.at(0); }

    void validate(std::size_t marker_count) const {
        if (nuclear_rounds.empty())
            throw Error("image '" + image_id + "': no nuclear round");
        if (markers.size() != marker_count)
            throw Error("image '" + image_id + "': expected " + std::to_string(marker_count) +
                        " marker channels, found " + std::to_string(markers.size()));
        const auto& ref = nuclear_rounds.front();
        auto check = [&](const IntensityPlane& p, const std::string& what) {
            if (!p.same_shape(ref))
                throw Error("image '" + image_id + "': " + what + " is " + std::to_string(p.width) + "x" +
                            std::to_string(p.height) + ", nuclear plane is " + std::to_string(ref.width) + "x" +
                            std::to_string(ref.height));
        };
        for (std::size_t r = 1; r < nuclear_rounds.size(); ++r) check(nuclear_rounds[r], "nuclear round " + std::to_string(r));
        for (std::size_t m = 0; m < markers.size(); ++m) check(markers[m], "marker " + std::to_string(m));
    }
};

struct Cohort {
    std::vector<std::string> marker_names;
    std::vector<MultiChannelImage> images;

    std::size_t marker_count() const noexcept { return marker_names.size(); }

    /// Marker classes in manifest order followed by the negative class.
    std::vector<std::string> class_names() const {
        auto names = marker_names;
        names.emplace_back(kNegativeClass);
        return names;
    }

    void validate() const {
        for (std::size_t i = 0; i < images.size(); ++i) {
            images[i].validate(marker_names.size());
            for (std::size_t j = 0; j < i; ++j)
                if (images[j].image_id == images[i].image_id)
                    throw Error("duplicate image_id '" + images[i].image_id + "'");
        }
    }
};

struct Point {
    double x = 0.0;
    double y = 0.0;
};

struct CellRecord {
    std::string image_id;
    std::uint32_t cell_id = 0;
    std::size_t area = 0;
    Point centroid;
    std::vector<double> mean_intensity;  // one per marker
    bool qc_pass = true;
};

/// Per-marker background probability (P_B) and positivity (P_F) of one cell.
/// `usable[k] == 0` marks a marker whose mixture fit failed on the cell's image;
/// such a marker can neither support a negative nor a positive label.
class CellScores {
public:
    CellScores() = default;

    CellScores(std::vector<double> p_background, std::vector<double> p_positive, std::vector<std::uint8_t> usable = {})
        : p_background_(std::move(p_background)), p_positive_(std::move(p_positive)), usable_(std::move(usable)) {
        if (usable_.empty()) usable_.assign(p_background_.size(), 1);
        if (p_positive_.size() != p_background_.size() || usable_.size() != p_background_.size())
            throw Error("CellScores: per-marker lists differ in length");
        for (std::size_t k = 0; k < p_background_.size(); ++k) {
            if (!(p_background_[k] >= 0.0 && p_background_[k] <= 1.0) ||
                !(p_positive_[k] >= 0.0 && p_positive_[k] <= 1.0))
                throw Error("CellScores: probability outside [0,1] for marker " + std::to_string(k));
        }
    }

    std::size_t marker_count() const noexcept { return p_background_.size(); }
    const std::vector<double>& p_background() const noexcept { return p_background_; }
    const std::vector<double>& p_positive() const noexcept { return p_positive_; }
    bool usable(std::size_t k) const noexcept { return usable_[k] != 0; }
    const std::vector<std::uint8_t>& usable_flags() const noexcept { return usable_; }

private:
    std::vector<double> p_background_;
    std::vector<double> p_positive_;
    std::vector<std::uint8_t> usable_;
};

/// Inclusive pixel bounding box.
struct Box {
    std::size_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;

    std::size_t width() const noexcept { return x1 - x0 + 1; }
    std::size_t height() const noexcept { return y1 - y0 + 1; }
    std::size_t area() const noexcept { return width() * height(); }

    Box expanded(std::size_t margin, std::size_t image_w, std::size_t image_h) const noexcept {
        return {x0 >= margin ? x0 - margin : 0, y0 >= margin ? y0 - margin : 0,
                std::min(x1 + margin, image_w - 1), std::min(y1 + margin, image_h - 1)};
    }
};

/// Per-label pixel lists (raster order) and bounding boxes, built in one pass.
class LabelIndex {
public:
    LabelIndex() = default;

    explicit LabelIndex(const LabelMask& mask) : width_(mask.width), height_(mask.height) {
        std::uint32_t max_label = 0;
        for (auto v : mask.data) max_label = std::max(max_label, v);
        offsets_.assign(std::size_t{max_label} + 2, 0);
        for (auto v : mask.data)
            if (v != 0) ++offsets_[v + 1];
        for (std::size_t i = 1; i < offsets_.size(); ++i) offsets_[i] += offsets_[i - 1];

        pixels_.resize(offsets_.back());
        boxes_.assign(std::size_t{max_label} + 1,
                      Box{std::numeric_limits<std::size_t>::max(), std::numeric_limits<std::size_t>::max(), 0, 0});
        std::vector<std::size_t> cursor(offsets_.begin(), offsets_.end() - 1);
        for (std::size_t y = 0; y < mask.height; ++y) {
            for (std::size_t x = 0; x < mask.width; ++x) {
                const std::size_t i = y * mask.width + x;
                const auto v = mask.data[i];
                if (v == 0) continue;
                pixels_[cursor[v]++] = i;
                auto& b = boxes_[v];
                b.x0 = std::min(b.x0, x);
                b.y0 = std::min(b.y0, y);
                b.x1 = std::max(b.x1, x);
                b.y1 = std::max(b.y1, y);
            }
        }
    }

    std::uint32_t max_label() const noexcept {
        return offsets_.empty() ? 0 : static_cast<std::uint32_t>(offsets_.size() - 2);
    }
    std::size_t width() const noexcept { return width_; }
    std::size_t height() const noexcept { return height_; }

    bool contains(std::uint32_t label) const noexcept { return label >= 1 && label <= max_label() && area(label) > 0; }

    std::size_t area(std::uint32_t label) const noexcept {
        if (label == 0 || label > max_label()) return 0;
        return offsets_[label + 1] - offsets_[label];
    }

    std::span<const std::size_t> pixels(std::uint32_t label) const noexcept {
        if (label == 0 || label > max_label()) return {};
        return {pixels_.data() + offsets_[label], offsets_[label + 1] - offsets_[label]};
    }

    const Box& bounds(std::uint32_t label) const {
        if (!contains(label)) throw Error("label " + std::to_string(label) + " not present in mask");
        return boxes_[label];
    }

    /// Areas indexed by label (entry 0 unused).
    std::vector<std::size_t> areas() const {
        std::vector<std::size_t> out(std::size_t{max_label()} + 1, 0);
        for (std::uint32_t l = 1; l <= max_label(); ++l) out[l] = area(l);
        return out;
    }

private:
    std::size_t width_ = 0;
    std::size_t height_ = 0;
    std::vector<std::size_t> offsets_;
    std::vector<std::size_t> pixels_;
    std::vector<Box> boxes_;
};

inline std::vector<CellRecord> build_cell_records(const LabelMask& mask, const LabelIndex& index,
                                                  const MultiChannelImage& image) {
    if (mask.width != image.width() || mask.height != image.height())
        throw Error("image '" + image.image_id + "': mask is " + std::to_string(mask.width) + "x" +
                    std::to_string(mask.height) + ", image is " + std::to_string(image.width()) + "x" +
                    std::to_string(image.height()));
    std::vector<CellRecord> records;
    for (std::uint32_t label = 1; label <= index.max_label(); ++label) {
        const auto px = index.pixels(label);
        if (px.empty()) continue;
        CellRecord rec;
        rec.image_id = image.image_id;
        rec.cell_id = label;
        rec.area = px.size();
        std::uint64_t sx = 0, sy = 0;
        for (auto i : px) {
            sx += i % mask.width;
            sy += i / mask.width;
        }
        rec.centroid = {static_cast<double>(sx) / static_cast<double>(px.size()),
                        static_cast<double>(sy) / static_cast<double>(px.size())};
        rec.mean_intensity.reserve(image.markers.size());
        for (const auto& plane : image.markers) {
            std::uint64_t sum = 0;
            for (auto i : px) sum += plane.data[i];
            rec.mean_intensity.push_back(static_cast<double>(sum) / static_cast<double>(px.size()));
        }
        records.push_back(std::move(rec));
    }
    return records;
}

inline std::vector<CellRecord> build_cell_records(const LabelMask& mask, const MultiChannelImage& image) {
    return build_cell_records(mask, LabelIndex(mask), image);
}

}  // namespace cellcat
