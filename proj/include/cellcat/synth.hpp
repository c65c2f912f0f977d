#pragma once
// Synthetic multi-marker cohorts with exact per-cell ground truth.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "core.hpp"
#include "io.hpp"

namespace cellcat {

enum class MarkerPattern { ring, disk };

struct ChannelIntensity {
    double foreground = 8000.0;
    double background = 300.0;
    double noise_sigma = 150.0;
};

struct SynthClass {
    std::string name;
    double fraction = 0.0;
    MarkerPattern pattern = MarkerPattern::ring;  // ignored for Negative
    std::optional<ChannelIntensity> intensity;    // marker channel override

    SynthClass() = default;
    SynthClass(std::string name_, double fraction_, MarkerPattern pattern_ = MarkerPattern::ring,
               std::optional<ChannelIntensity> intensity_ = std::nullopt)
        : name(std::move(name_)), fraction(fraction_), pattern(pattern_), intensity(intensity_) {}
};

struct SynthSpec {
    std::size_t n_images = 2;
    std::size_t width = 256;
    std::size_t height = 256;
    std::size_t cell_count = 80;
    std::vector<SynthClass> classes{{"CD3", 0.10}, {"CD20", 0.05}, {"Negative", 0.85}};
    double radius_min = 5.0;
    double radius_max = 7.0;
    double ring_width = 3.0;     // rim annulus r - ring_width < d <= r
    double blob_spill_px = 2.0;  // disk pattern radius r + spill
    ChannelIntensity nuclear;
    ChannelIntensity marker;
    std::size_t n_rounds = 3;
    double jitter_px = 0.0;
    double tissue_loss_fraction = 0.0;
    bool shared_round_noise = false;
    std::uint64_t seed = 42;

    std::vector<std::string> marker_names() const {
        std::vector<std::string> out;
        for (const auto& c : classes)
            if (c.name != kNegativeClass) out.push_back(c.name);
        return out;
    }

    void validate() const {
        if (n_images < 1 || width < 8 || height < 8) throw Error("SynthSpec: need >= 1 image of at least 8x8");
        if (n_rounds < 1) throw Error("SynthSpec: n_rounds must be >= 1");
        double sum = 0.0;
        bool has_negative = false;
        for (const auto& c : classes) {
            validate_identifier(c.name, "class name");
            if (!(c.fraction >= 0.0 && c.fraction <= 1.0)) throw Error("SynthSpec: class fractions must be in [0,1]");
            sum += c.fraction;
            has_negative = has_negative || c.name == kNegativeClass;
        }
        if (!has_negative) throw Error("SynthSpec: classes must include 'Negative'");
        if (std::abs(sum - 1.0) > 1e-9) throw Error("SynthSpec: class fractions must sum to 1");
        if (radius_min < 2.0 || radius_max < radius_min) throw Error("SynthSpec: radii must satisfy 2 <= min <= max");
        if (2.0 * radius_max + 4.0 >= static_cast<double>(std::min(width, height)))
            throw Error("SynthSpec: image too small for the nucleus radius");
        if (!(tissue_loss_fraction >= 0.0 && tissue_loss_fraction <= 1.0))
            throw Error("SynthSpec: tissue_loss_fraction must be in [0,1]");
        if (ring_width <= 0.0 || jitter_px < 0.0 || blob_spill_px < 0.0)
            throw Error("SynthSpec: ring_width must be positive, jitter and spill non-negative");
    }
};

struct GroundTruthCell {
    std::string image_id;
    std::uint32_t cell_id = 0;
    Point center;
    double radius = 0.0;
    std::string true_class;
    bool tissue_lost = false;
};

struct SynthCohort {
    Cohort cohort;
    std::vector<GroundTruthCell> truth;
};

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

inline ChannelIntensity channel_from_json(const nlohmann::json& j, ChannelIntensity d) {
    d.foreground = j.value("foreground", d.foreground);
    d.background = j.value("background", d.background);
    d.noise_sigma = j.value("noise_sigma", d.noise_sigma);
    return d;
}

inline nlohmann::json channel_to_json(const ChannelIntensity& c) {
    return {{"foreground", c.foreground}, {"background", c.background}, {"noise_sigma", c.noise_sigma}};
}

inline SynthSpec synth_spec_from_json(const nlohmann::json& j) {
    SynthSpec s;
    try {
        s.n_images = j.value("n_images", s.n_images);
        s.width = j.value("width", s.width);
        s.height = j.value("height", s.height);
        s.cell_count = j.value("cell_count", s.cell_count);
        if (j.contains("classes")) {
            s.classes.clear();
            for (const auto& c : j.at("classes")) {
                SynthClass sc;
                sc.name = c.at("name").get<std::string>();
                sc.fraction = c.at("fraction").get<double>();
                const auto pattern = c.value("pattern", std::string("ring"));
                if (pattern != "ring" && pattern != "disk") throw Error("SynthSpec: unknown pattern '" + pattern + "'");
                sc.pattern = pattern == "disk" ? MarkerPattern::disk : MarkerPattern::ring;
                if (c.contains("intensity")) sc.intensity = channel_from_json(c.at("intensity"), ChannelIntensity{});
                s.classes.push_back(std::move(sc));
            }
        }
        if (j.contains("nucleus_radius")) {
            const auto r = j.at("nucleus_radius").get<std::vector<double>>();
            if (r.size() != 2) throw Error("SynthSpec: nucleus_radius must be [min, max]");
            s.radius_min = r[0];
            s.radius_max = r[1];
        }
        s.ring_width = j.value("membrane_ring_width", s.ring_width);
        s.blob_spill_px = j.value("blob_spill_px", s.blob_spill_px);
        if (j.contains("nuclear")) s.nuclear = channel_from_json(j.at("nuclear"), s.nuclear);
        if (j.contains("marker")) s.marker = channel_from_json(j.at("marker"), s.marker);
        s.n_rounds = j.value("n_rounds", s.n_rounds);
        s.jitter_px = j.value("jitter_px", s.jitter_px);
        s.tissue_loss_fraction = j.value("tissue_loss_fraction", s.tissue_loss_fraction);
        s.shared_round_noise = j.value("shared_round_noise", s.shared_round_noise);
        s.seed = j.value("seed", s.seed);
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("SynthSpec: ") + e.what());
    }
    s.validate();
    return s;
}

inline nlohmann::json synth_spec_to_json(const SynthSpec& s) {
    nlohmann::json classes = nlohmann::json::array();
    for (const auto& c : s.classes) {
        nlohmann::json e = {{"name", c.name}, {"fraction", c.fraction},
                            {"pattern", c.pattern == MarkerPattern::disk ? "disk" : "ring"}};
        if (c.intensity) e["intensity"] = channel_to_json(*c.intensity);
        classes.push_back(std::move(e));
    }
    return {{"n_images", s.n_images},
            {"width", s.width},
            {"height", s.height},
            {"cell_count", s.cell_count},
            {"classes", classes},
            {"nucleus_radius", {s.radius_min, s.radius_max}},
            {"membrane_ring_width", s.ring_width},
            {"blob_spill_px", s.blob_spill_px},
            {"nuclear", channel_to_json(s.nuclear)},
            {"marker", channel_to_json(s.marker)},
            {"n_rounds", s.n_rounds},
            {"jitter_px", s.jitter_px},
            {"tissue_loss_fraction", s.tissue_loss_fraction},
            {"shared_round_noise", s.shared_round_noise},
            {"seed", s.seed}};
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

namespace detail {

enum class Stream : std::uint32_t { placement = 1, nuclear = 2, marker = 3, jitter = 4 };

inline std::mt19937_64 derived_rng(std::uint64_t seed, std::size_t image, Stream stream, std::size_t sub = 0) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(image), static_cast<std::uint32_t>(stream),
                      static_cast<std::uint32_t>(sub)};
    return std::mt19937_64(seq);
}

inline std::uint16_t clamp_sample(double v) {
    return static_cast<std::uint16_t>(std::clamp(std::round(v), 0.0, 65535.0));
}

inline IntensityPlane noise_plane(std::size_t w, std::size_t h, double mean, double sigma, std::mt19937_64& rng) {
    IntensityPlane p(w, h);
    std::normal_distribution<double> n(0.0, sigma);
    for (auto& v : p.data) v = clamp_sample(mean + n(rng));
    return p;
}

/// Calls f(x, y) for every pixel whose center lies at distance in (inner, outer]
/// from c. inner < 0 gives a filled disk.
template <typename F>
void for_each_annulus_pixel(std::size_t w, std::size_t h, Point c, double inner, double outer, F&& f) {
    const auto x0 = static_cast<std::ptrdiff_t>(std::floor(c.x - outer));
    const auto x1 = static_cast<std::ptrdiff_t>(std::ceil(c.x + outer));
    const auto y0 = static_cast<std::ptrdiff_t>(std::floor(c.y - outer));
    const auto y1 = static_cast<std::ptrdiff_t>(std::ceil(c.y + outer));
    for (auto y = std::max<std::ptrdiff_t>(y0, 0); y <= std::min<std::ptrdiff_t>(y1, static_cast<std::ptrdiff_t>(h) - 1); ++y)
        for (auto x = std::max<std::ptrdiff_t>(x0, 0); x <= std::min<std::ptrdiff_t>(x1, static_cast<std::ptrdiff_t>(w) - 1); ++x) {
            const double d = std::hypot(static_cast<double>(x) - c.x, static_cast<double>(y) - c.y);
            if (d <= outer && d > inner) f(static_cast<std::size_t>(x), static_cast<std::size_t>(y));
        }
}

}  // namespace detail

inline std::string synth_image_id(std::size_t j) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "img_%03zu", j);
    return buf;
}

/// Renders image `j` of the cohort and appends its ground truth.
inline MultiChannelImage render_synth_image(const SynthSpec& spec, std::size_t j, std::vector<GroundTruthCell>& truth) {
    const auto markers = spec.marker_names();
    const std::string image_id = synth_image_id(j);
    const std::size_t w = spec.width, h = spec.height;

    auto rng = detail::derived_rng(spec.seed, j, detail::Stream::placement);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    struct Cell {
        Point c;
        double r;
        std::size_t cls;
        bool lost;
    };
    std::vector<Cell> cells;
    const std::size_t max_attempts = 10 * spec.cell_count;
    std::size_t attempts = 0;
    while (cells.size() < spec.cell_count) {
        if (attempts++ >= max_attempts)
            throw Error("synth: could not place " + std::to_string(spec.cell_count) + " cells in image '" + image_id +
                        "' after " + std::to_string(max_attempts) + " attempts; lower the cell density");
        const double r = spec.radius_min + (spec.radius_max - spec.radius_min) * unit(rng);
        const double cx = (r + 1.0) + (static_cast<double>(w) - 2.0 * r - 3.0) * unit(rng);
        const double cy = (r + 1.0) + (static_cast<double>(h) - 2.0 * r - 3.0) * unit(rng);
        const bool clear = std::all_of(cells.begin(), cells.end(), [&](const Cell& o) {
            return std::hypot(o.c.x - cx, o.c.y - cy) >= o.r + r + 2.0;
        });
        if (!clear) continue;
        cells.push_back({{cx, cy}, r, 0, false});
    }
    for (auto& cell : cells) {
        const double u = unit(rng);
        double acc = 0.0;
        cell.cls = spec.classes.size() - 1;
        for (std::size_t c = 0; c < spec.classes.size(); ++c) {
            acc += spec.classes[c].fraction;
            if (u < acc) {
                cell.cls = c;
                break;
            }
        }
        cell.lost = unit(rng) < spec.tissue_loss_fraction;
    }

    MultiChannelImage img;
    img.image_id = image_id;

    auto jitter_rng = detail::derived_rng(spec.seed, j, detail::Stream::jitter);
    std::uniform_real_distribution<double> jitter(-spec.jitter_px, spec.jitter_px);
    for (std::size_t round = 0; round < spec.n_rounds; ++round) {
        double dx = 0.0, dy = 0.0;
        if (round > 0 && spec.jitter_px > 0.0) {
            dx = jitter(jitter_rng);
            dy = jitter(jitter_rng);
        }
        auto noise = detail::derived_rng(spec.seed, j, detail::Stream::nuclear, spec.shared_round_noise ? 0 : round);
        const auto& ch = spec.nuclear;
        auto plane = detail::noise_plane(w, h, ch.background, ch.noise_sigma, noise);
        std::normal_distribution<double> n(0.0, ch.noise_sigma);
        for (const auto& cell : cells) {
            const bool lost = round > 0 && cell.lost;
            detail::for_each_annulus_pixel(w, h, {cell.c.x + dx, cell.c.y + dy}, -1.0, cell.r,
                                           [&](std::size_t x, std::size_t y) {
                                               plane(x, y) = lost ? 0 : detail::clamp_sample(ch.foreground + n(noise));
                                           });
        }
        img.nuclear_rounds.push_back(std::move(plane));
    }

    for (std::size_t m = 0; m < markers.size(); ++m) {
        std::size_t cls_index = 0;
        while (spec.classes[cls_index].name != markers[m]) ++cls_index;
        const auto& cls = spec.classes[cls_index];
        const auto ch = cls.intensity.value_or(spec.marker);
        auto noise = detail::derived_rng(spec.seed, j, detail::Stream::marker, m);
        auto plane = detail::noise_plane(w, h, ch.background, ch.noise_sigma, noise);
        std::normal_distribution<double> n(0.0, ch.noise_sigma);
        for (const auto& cell : cells) {
            if (cell.cls != cls_index) continue;
            const double inner = cls.pattern == MarkerPattern::ring ? cell.r - spec.ring_width : -1.0;
            const double outer = cls.pattern == MarkerPattern::ring ? cell.r : cell.r + spec.blob_spill_px;
            detail::for_each_annulus_pixel(w, h, cell.c, inner, outer, [&](std::size_t x, std::size_t y) {
                plane(x, y) = detail::clamp_sample(ch.foreground + n(noise));
            });
        }
        img.markers.push_back(std::move(plane));
    }

    for (std::size_t i = 0; i < cells.size(); ++i)
        truth.push_back({image_id, static_cast<std::uint32_t>(i + 1), cells[i].c, cells[i].r,
                         spec.classes[cells[i].cls].name, cells[i].lost});
    return img;
}

inline SynthCohort generate_synth(const SynthSpec& spec) {
    spec.validate();
    SynthCohort out;
    out.cohort.marker_names = spec.marker_names();
    for (std::size_t j = 0; j < spec.n_images; ++j) out.cohort.images.push_back(render_synth_image(spec, j, out.truth));
    return out;
}

// ---------------------------------------------------------------------------
// Ground-truth CSV
// ---------------------------------------------------------------------------

inline std::string encode_ground_truth(const std::vector<GroundTruthCell>& truth) {
    std::string out = "image_id,cell_id_truth,cx,cy,r,true_class,tissue_lost\n";
    for (const auto& t : truth)
        out += t.image_id + "," + std::to_string(t.cell_id) + "," + format_fixed6(t.center.x) + "," +
               format_fixed6(t.center.y) + "," + format_fixed6(t.radius) + "," + t.true_class + "," +
               (t.tissue_lost ? "1" : "0") + "\n";
    return out;
}

inline std::vector<GroundTruthCell> parse_ground_truth(std::string_view text) {
    const auto lines = read_csv_lines(text);
    if (lines.empty() || lines[0] != "image_id,cell_id_truth,cx,cy,r,true_class,tissue_lost")
        throw Error("ground truth: unexpected header");
    std::vector<GroundTruthCell> out;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const auto f = split_csv_line(lines[i]);
        if (f.size() != 7) throw Error("ground truth line " + std::to_string(i + 1) + ": expected 7 fields");
        GroundTruthCell t;
        t.image_id = f[0];
        t.cell_id = static_cast<std::uint32_t>(parse_uint(f[1], "cell_id_truth"));
        t.center = {parse_double(f[2], "cx"), parse_double(f[3], "cy")};
        t.radius = parse_double(f[4], "r");
        t.true_class = f[5];
        if (f[6] != "0" && f[6] != "1") throw Error("ground truth: tissue_lost must be 0 or 1");
        t.tissue_lost = f[6] == "1";
        out.push_back(std::move(t));
    }
    return out;
}

inline std::vector<GroundTruthCell> read_ground_truth(const fs::path& path) {
    try {
        return parse_ground_truth(read_file(path));
    } catch (const Error& e) {
        throw Error(path.string() + ": " + e.what());
    }
}

/// Writes manifest.json, one directory of PGM planes per image and
/// ground_truth.csv under `out_dir`. Returns the manifest path.
inline fs::path write_synth(const SynthCohort& s, const fs::path& out_dir) {
    CohortManifest m;
    m.marker_names = s.cohort.marker_names;
    m.base_dir = out_dir;
    for (const auto& img : s.cohort.images) {
        ManifestEntry e;
        e.image_id = img.image_id;
        for (std::size_t r = 0; r < img.nuclear_rounds.size(); ++r) {
            const std::string rel = img.image_id + "/nuclear_r" + std::to_string(r) + ".pgm";
            write_plane(img.nuclear_rounds[r], out_dir / rel);
            e.nuclear_round_paths.push_back(rel);
        }
        for (std::size_t k = 0; k < img.markers.size(); ++k) {
            const std::string rel = img.image_id + "/" + s.cohort.marker_names[k] + ".pgm";
            write_plane(img.markers[k], out_dir / rel);
            e.marker_paths.push_back(rel);
        }
        m.images.push_back(std::move(e));
    }
    const fs::path manifest = out_dir / "manifest.json";
    write_manifest(m, manifest);
    write_file_atomic(out_dir / "ground_truth.csv", encode_ground_truth(s.truth));
    return manifest;
}

inline fs::path generate_cohort(const SynthSpec& spec, const fs::path& out_dir) {
    return write_synth(generate_synth(spec), out_dir);
}

}  // namespace cellcat
