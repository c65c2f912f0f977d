#pragma once
// Readers and writers for 16-bit PGM planes and label masks, PPM overlays,
// JSON cohort manifests and the per-cell CSV table.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "core.hpp"

namespace cellcat {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---------------------------------------------------------------------------
// File helpers
// ---------------------------------------------------------------------------

inline std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open '" + path.string() + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Writes via a sibling temporary and renames, so a failed write never
/// clobbers an existing artifact.
inline void write_file_atomic(const fs::path& path, std::string_view bytes) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write '" + path.string() + "'");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw Error("write failed for '" + path.string() + "'");
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw Error("cannot write '" + path.string() + "': " + ec.message());
}

inline json read_json(const fs::path& path) {
    try {
        return json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw Error("'" + path.string() + "': " + e.what());
    }
}

inline void write_json(const json& doc, const fs::path& path) { write_file_atomic(path, doc.dump(2) + "\n"); }

// ---------------------------------------------------------------------------
// Netpbm
// ---------------------------------------------------------------------------

namespace detail {

class PnmHeaderReader {
public:
    explicit PnmHeaderReader(std::string_view bytes) : bytes_(bytes) {}

    void skip_space_and_comments() {
        while (pos_ < bytes_.size()) {
            const char c = bytes_[pos_];
            if (c == '#') {
                while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
            } else if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
                ++pos_;
            } else {
                break;
            }
        }
    }

    std::uint64_t number(const char* field) {
        skip_space_and_comments();
        if (pos_ >= bytes_.size() || bytes_[pos_] < '0' || bytes_[pos_] > '9')
            throw Error(std::string("PGM parse error: bad ") + field);
        std::uint64_t v = 0;
        while (pos_ < bytes_.size() && bytes_[pos_] >= '0' && bytes_[pos_] <= '9') {
            v = v * 10 + static_cast<std::uint64_t>(bytes_[pos_] - '0');
            if (v > (1ull << 32)) throw Error(std::string("PGM parse error: ") + field + " out of range");
            ++pos_;
        }
        return v;
    }

    std::string_view magic() {
        if (bytes_.size() < 2) throw Error("PGM parse error: unexpected magic (file too short)");
        pos_ = 2;
        return bytes_.substr(0, 2);
    }

    /// Exactly one whitespace byte separates maxval from the raster.
    void end_header() {
        if (pos_ >= bytes_.size() || !(bytes_[pos_] == ' ' || bytes_[pos_] == '\t' || bytes_[pos_] == '\n' || bytes_[pos_] == '\r'))
            throw Error("PGM parse error: missing whitespace after maxval");
        ++pos_;
    }

    std::size_t position() const noexcept { return pos_; }

private:
    std::string_view bytes_;
    std::size_t pos_ = 0;
};

template <typename T>
Grid<T> parse_pgm_as(std::string_view bytes) {
    PnmHeaderReader hdr(bytes);
    if (hdr.magic() != "P5") throw Error("PGM parse error: unexpected magic '" + std::string(bytes.substr(0, 2)) + "'");
    const auto width = hdr.number("width");
    const auto height = hdr.number("height");
    const auto maxval = hdr.number("maxval");
    if (width == 0 || height == 0) throw Error("PGM parse error: width/height must be positive");
    if (width > (1u << 20) || height > (1u << 20)) throw Error("PGM parse error: width/height too large");
    if (maxval == 0 || maxval > 65535) throw Error("PGM parse error: maxval " + std::to_string(maxval) + " outside 1..65535");
    hdr.end_header();

    const std::size_t bps = maxval <= 255 ? 1 : 2;
    const std::size_t n = static_cast<std::size_t>(width * height);
    const std::size_t start = hdr.position();
    if (bytes.size() - start < n * bps)
        throw Error("PGM parse error: truncated payload (expected " + std::to_string(n * bps) + " bytes, found " +
                    std::to_string(bytes.size() - start) + ")");
    Grid<T> g(static_cast<std::size_t>(width), static_cast<std::size_t>(height));
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + start);
    if (bps == 1) {
        for (std::size_t i = 0; i < n; ++i) g.data[i] = static_cast<T>(p[i]);
    } else {
        for (std::size_t i = 0; i < n; ++i) g.data[i] = static_cast<T>((p[2 * i] << 8) | p[2 * i + 1]);
    }
    return g;
}

template <typename T>
std::string encode_pgm16(const Grid<T>& g) {
    std::string out = "P5\n" + std::to_string(g.width) + " " + std::to_string(g.height) + "\n65535\n";
    const std::size_t header = out.size();
    out.resize(header + 2 * g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
        const auto v = static_cast<std::uint32_t>(g.data[i]);
        out[header + 2 * i] = static_cast<char>((v >> 8) & 0xFF);
        out[header + 2 * i + 1] = static_cast<char>(v & 0xFF);
    }
    return out;
}

}  // namespace detail

/// Parses binary PGM. 16-bit samples are big-endian; 8-bit files are widened.
inline IntensityPlane parse_plane(std::string_view bytes) { return detail::parse_pgm_as<std::uint16_t>(bytes); }
inline std::string encode_plane(const IntensityPlane& plane) { return detail::encode_pgm16(plane); }

inline IntensityPlane read_plane(const fs::path& path) {
    try {
        return parse_plane(read_file(path));
    } catch (const Error& e) {
        throw Error(path.string() + ": " + e.what());
    }
}

inline void write_plane(const IntensityPlane& plane, const fs::path& path) {
    write_file_atomic(path, encode_plane(plane));
}

inline constexpr std::uint32_t kMaxStoredLabel = 65535;

inline std::string encode_mask(const LabelMask& mask) {
    const auto max_label = mask.data.empty() ? 0u : *std::max_element(mask.data.begin(), mask.data.end());
    if (max_label > kMaxStoredLabel)
        throw Error("label mask has " + std::to_string(max_label) +
                    " labels; 16-bit PGM masks hold at most 65535, tile the image into smaller fields");
    return detail::encode_pgm16(mask);
}

inline LabelMask parse_mask(std::string_view bytes) { return detail::parse_pgm_as<std::uint32_t>(bytes); }

inline void write_mask(const LabelMask& mask, const fs::path& path) { write_file_atomic(path, encode_mask(mask)); }

inline LabelMask read_mask(const fs::path& path) {
    try {
        return parse_mask(read_file(path));
    } catch (const Error& e) {
        throw Error(path.string() + ": " + e.what());
    }
}

struct Rgb {
    std::uint8_t r = 0, g = 0, b = 0;
    bool operator==(const Rgb&) const = default;
};
using RgbImage = Grid<Rgb>;

inline std::string encode_ppm(const RgbImage& img) {
    std::string out = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    out.reserve(out.size() + 3 * img.size());
    for (const auto& px : img.data) {
        out.push_back(static_cast<char>(px.r));
        out.push_back(static_cast<char>(px.g));
        out.push_back(static_cast<char>(px.b));
    }
    return out;
}

inline RgbImage parse_ppm(std::string_view bytes) {
    detail::PnmHeaderReader hdr(bytes);
    if (hdr.magic() != "P6") throw Error("PPM parse error: unexpected magic");
    const auto w = hdr.number("width");
    const auto h = hdr.number("height");
    const auto maxval = hdr.number("maxval");
    if (maxval != 255) throw Error("PPM parse error: only maxval 255 supported");
    if (w == 0 || h == 0 || w > (1u << 20) || h > (1u << 20)) throw Error("PPM parse error: bad width/height");
    hdr.end_header();
    const std::size_t start = hdr.position();
    if (bytes.size() - start < 3 * w * h) throw Error("PPM parse error: truncated payload");
    RgbImage img(static_cast<std::size_t>(w), static_cast<std::size_t>(h));
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + start);
    for (std::size_t i = 0; i < img.size(); ++i) img.data[i] = {p[3 * i], p[3 * i + 1], p[3 * i + 2]};
    return img;
}

// ---------------------------------------------------------------------------
// Cohort manifest
// ---------------------------------------------------------------------------

struct ManifestEntry {
    std::string image_id;
    std::vector<std::string> nuclear_round_paths;
    std::vector<std::string> marker_paths;
};

struct CohortManifest {
    std::vector<std::string> marker_names;
    std::vector<ManifestEntry> images;
    fs::path base_dir;  // paths resolve relative to this
};

inline void validate_identifier(const std::string& id, const std::string& what) {
    if (id.empty() || id.find_first_of(",\n\r\"") != std::string::npos)
        throw Error(what + " '" + id + "' is empty or contains a comma, quote or newline");
}

inline CohortManifest manifest_from_json(const json& doc, fs::path base_dir) {
    CohortManifest m;
    m.base_dir = std::move(base_dir);
    try {
        m.marker_names = doc.at("marker_names").get<std::vector<std::string>>();
        for (const auto& e : doc.at("images")) {
            ManifestEntry entry;
            entry.image_id = e.at("image_id").get<std::string>();
            entry.nuclear_round_paths = e.at("nuclear_round_paths").get<std::vector<std::string>>();
            entry.marker_paths = e.at("marker_paths").get<std::vector<std::string>>();
            m.images.push_back(std::move(entry));
        }
    } catch (const json::exception& e) {
        throw Error(std::string("manifest: ") + e.what());
    }
    for (const auto& name : m.marker_names) {
        validate_identifier(name, "marker name");
        if (name == kNegativeClass) throw Error("manifest: marker name 'Negative' is reserved");
    }
    for (const auto& e : m.images) {
        validate_identifier(e.image_id, "image_id");
        if (e.nuclear_round_paths.empty()) throw Error("image '" + e.image_id + "': no nuclear round paths");
        if (e.marker_paths.size() != m.marker_names.size())
            throw Error("image '" + e.image_id + "': " + std::to_string(e.marker_paths.size()) + " marker paths for " +
                        std::to_string(m.marker_names.size()) + " declared markers");
    }
    return m;
}

inline json manifest_to_json(const CohortManifest& m) {
    json doc;
    doc["marker_names"] = m.marker_names;
    doc["images"] = json::array();
    for (const auto& e : m.images)
        doc["images"].push_back(
            {{"image_id", e.image_id}, {"nuclear_round_paths", e.nuclear_round_paths}, {"marker_paths", e.marker_paths}});
    return doc;
}

inline CohortManifest read_manifest(const fs::path& path) {
    return manifest_from_json(read_json(path), path.parent_path());
}

inline void write_manifest(const CohortManifest& m, const fs::path& path) { write_json(manifest_to_json(m), path); }

inline MultiChannelImage load_image(const CohortManifest& m, std::size_t i) {
    const auto& e = m.images.at(i);
    MultiChannelImage img;
    img.image_id = e.image_id;
    auto load = [&](const std::string& rel) {
        const fs::path p = m.base_dir / rel;
        if (!fs::exists(p)) throw Error("image '" + e.image_id + "': missing file '" + p.string() + "'");
        try {
            return read_plane(p);
        } catch (const Error& err) {
            throw Error("image '" + e.image_id + "': " + err.what());
        }
    };
    for (const auto& p : e.nuclear_round_paths) img.nuclear_rounds.push_back(load(p));
    for (const auto& p : e.marker_paths) img.markers.push_back(load(p));
    img.validate(m.marker_names.size());
    return img;
}

inline Cohort load_cohort(const CohortManifest& m) {
    Cohort c;
    c.marker_names = m.marker_names;
    for (std::size_t i = 0; i < m.images.size(); ++i) c.images.push_back(load_image(m, i));
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// Per-cell table
// ---------------------------------------------------------------------------

/// One row of the cell table. Scores and assignment are filled in by later
/// pipeline stages; absent values serialize as empty fields.
struct CellRow {
    CellRecord record;
    std::optional<CellScores> scores;
    std::string label;  // empty when unassigned
    std::optional<double> probability;
};

struct CellTable {
    std::vector<std::string> marker_names;
    std::vector<CellRow> rows;
};

inline std::string format_fixed6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

inline std::vector<std::string> split_csv_line(std::string_view line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        out.emplace_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

inline std::vector<std::string> read_csv_lines(std::string_view text) {
    std::vector<std::string> lines;
    std::size_t start = 0;
    while (start < text.size()) {
        auto nl = text.find('\n', start);
        if (nl == std::string_view::npos) nl = text.size();
        std::string line(text.substr(start, nl - start));
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) lines.push_back(std::move(line));
        start = nl + 1;
    }
    return lines;
}

inline double parse_double(const std::string& s, const char* what) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw Error(std::string("CSV: cannot parse ") + what + " value '" + s + "'");
    }
}

inline std::uint64_t parse_uint(const std::string& s, const char* what) {
    try {
        std::size_t used = 0;
        const auto v = std::stoull(s, &used);
        if (used != s.size() || s.empty() || s[0] == '-') throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw Error(std::string("CSV: cannot parse ") + what + " value '" + s + "'");
    }
}

inline std::string cell_table_header(const std::vector<std::string>& markers) {
    std::string h = "image_id,cell_id,area,cx,cy,qc_pass";
    for (const auto& m : markers) h += ",mean_" + m;
    for (const auto& m : markers) h += ",pB_" + m;
    for (const auto& m : markers) h += ",pF_" + m;
    h += ",label,probability";
    return h;
}

inline std::string encode_cell_table(const CellTable& table) {
    const auto k = table.marker_names.size();
    std::vector<const CellRow*> order;
    order.reserve(table.rows.size());
    for (const auto& r : table.rows) {
        if (r.record.mean_intensity.size() != k)
            throw Error("cell table: cell " + r.record.image_id + "/" + std::to_string(r.record.cell_id) + " has " +
                        std::to_string(r.record.mean_intensity.size()) + " intensities for " + std::to_string(k) +
                        " markers");
        order.push_back(&r);
    }
    std::sort(order.begin(), order.end(), [](const CellRow* a, const CellRow* b) {
        if (a->record.image_id != b->record.image_id) return a->record.image_id < b->record.image_id;
        return a->record.cell_id < b->record.cell_id;
    });

    std::string out = cell_table_header(table.marker_names) + "\n";
    for (const auto* row : order) {
        const auto& r = row->record;
        out += r.image_id + "," + std::to_string(r.cell_id) + "," + std::to_string(r.area) + "," +
               format_fixed6(r.centroid.x) + "," + format_fixed6(r.centroid.y) + "," + (r.qc_pass ? "1" : "0");
        for (double v : r.mean_intensity) out += "," + format_fixed6(v);
        for (std::size_t m = 0; m < k; ++m) {
            out += ",";
            if (row->scores && row->scores->usable(m)) out += format_fixed6(row->scores->p_background()[m]);
        }
        for (std::size_t m = 0; m < k; ++m) {
            out += ",";
            if (row->scores && row->scores->usable(m)) out += format_fixed6(row->scores->p_positive()[m]);
        }
        out += "," + row->label + ",";
        if (row->probability) out += format_fixed6(*row->probability);
        out += "\n";
    }
    return out;
}

inline CellTable parse_cell_table(std::string_view text) {
    const auto lines = read_csv_lines(text);
    if (lines.empty()) throw Error("cell table: missing header");
    const auto header = split_csv_line(lines[0]);
    if (header.size() < 8 || (header.size() - 8) % 3 != 0) throw Error("cell table: malformed header");
    const std::size_t k = (header.size() - 8) / 3;
    CellTable table;
    for (std::size_t m = 0; m < k; ++m) {
        const auto& h = header[6 + m];
        if (h.rfind("mean_", 0) != 0) throw Error("cell table: expected mean_<marker> column, found '" + h + "'");
        table.marker_names.push_back(h.substr(5));
    }
    if (cell_table_header(table.marker_names) != lines[0]) throw Error("cell table: unexpected header layout");

    for (std::size_t li = 1; li < lines.size(); ++li) {
        const auto f = split_csv_line(lines[li]);
        if (f.size() != header.size())
            throw Error("cell table line " + std::to_string(li + 1) + ": expected " + std::to_string(header.size()) +
                        " fields, found " + std::to_string(f.size()));
        CellRow row;
        auto& r = row.record;
        r.image_id = f[0];
        r.cell_id = static_cast<std::uint32_t>(parse_uint(f[1], "cell_id"));
        r.area = static_cast<std::size_t>(parse_uint(f[2], "area"));
        r.centroid = {parse_double(f[3], "cx"), parse_double(f[4], "cy")};
        if (f[5] != "0" && f[5] != "1") throw Error("cell table: qc_pass must be 0 or 1");
        r.qc_pass = f[5] == "1";
        for (std::size_t m = 0; m < k; ++m) r.mean_intensity.push_back(parse_double(f[6 + m], "mean"));
        bool any_score = false;
        std::vector<double> pb(k, 0.0), pf(k, 0.0);
        std::vector<std::uint8_t> usable(k, 0);
        for (std::size_t m = 0; m < k; ++m) {
            const auto& sb = f[6 + k + m];
            const auto& sf = f[6 + 2 * k + m];
            if (sb.empty() != sf.empty()) throw Error("cell table: pB/pF presence mismatch");
            if (sb.empty()) continue;
            any_score = true;
            usable[m] = 1;
            pb[m] = parse_double(sb, "pB");
            pf[m] = parse_double(sf, "pF");
        }
        if (any_score) row.scores = CellScores(std::move(pb), std::move(pf), std::move(usable));
        row.label = f[6 + 3 * k];
        if (!f[7 + 3 * k].empty()) row.probability = parse_double(f[7 + 3 * k], "probability");
        table.rows.push_back(std::move(row));
    }
    return table;
}

inline void write_cell_table(const CellTable& table, const fs::path& path) {
    write_file_atomic(path, encode_cell_table(table));
}

inline CellTable read_cell_table(const fs::path& path) {
    try {
        return parse_cell_table(read_file(path));
    } catch (const Error& e) {
        throw Error(path.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Overlay
// ---------------------------------------------------------------------------

/// Class colors by class index: markers in manifest order, then Negative
/// (always blue).
inline Rgb class_color(std::size_t class_index, std::size_t marker_count) {
    static constexpr std::array<Rgb, 6> kMarkerPalette{{
        {0, 255, 0}, {255, 0, 0}, {255, 255, 0}, {255, 0, 255}, {0, 255, 255}, {255, 128, 0},
    }};
    if (class_index >= marker_count) return {0, 0, 255};
    return kMarkerPalette[class_index % kMarkerPalette.size()];
}

struct CellAssignment {
    std::size_t class_index = 0;
    double probability = 1.0;
};

/// Grayscale nuclear channel with each assigned cell tinted by its class
/// color. Cells below `flag_threshold` get a one-pixel border in the pure
/// class color. `assignments` is indexed by label; entries without a value
/// are left untinted.
inline RgbImage render_overlay(const IntensityPlane& nuclear, const LabelMask& mask,
                               const std::vector<std::optional<CellAssignment>>& assignments, std::size_t marker_count,
                               double flag_threshold = 0.9) {
    if (!mask.same_shape(nuclear)) throw Error("overlay: mask and image dimensions differ");
    RgbImage out(nuclear.width, nuclear.height);
    std::uint16_t lo = 0, hi = 0;
    if (!nuclear.empty()) {
        const auto [mn, mx] = std::minmax_element(nuclear.data.begin(), nuclear.data.end());
        lo = *mn;
        hi = *mx;
    }
    const double span = hi > lo ? static_cast<double>(hi - lo) : 1.0;
    for (std::size_t i = 0; i < nuclear.size(); ++i) {
        const auto g = static_cast<std::uint8_t>(std::lround(255.0 * (nuclear.data[i] - lo) / span));
        out.data[i] = {g, g, g};
    }

    auto assignment_of = [&](std::uint32_t label) -> const CellAssignment* {
        if (label == 0 || label >= assignments.size() || !assignments[label]) return nullptr;
        return &*assignments[label];
    };
    for (std::size_t y = 0; y < mask.height; ++y) {
        for (std::size_t x = 0; x < mask.width; ++x) {
            const auto label = mask(x, y);
            const auto* a = assignment_of(label);
            if (!a) continue;
            const Rgb c = class_color(a->class_index, marker_count);
            bool boundary = x == 0 || y == 0 || x + 1 == mask.width || y + 1 == mask.height ||
                            mask(x - 1, y) != label || mask(x + 1, y) != label || mask(x, y - 1) != label ||
                            mask(x, y + 1) != label;
            auto& px = out(x, y);
            if (boundary && a->probability < flag_threshold) {
                px = c;
            } else {
                px = {static_cast<std::uint8_t>((px.r + c.r) / 2), static_cast<std::uint8_t>((px.g + c.g) / 2),
                      static_cast<std::uint8_t>((px.b + c.b) / 2)};
            }
        }
    }
    return out;
}

inline void write_overlay(const RgbImage& img, const fs::path& path) { write_file_atomic(path, encode_ppm(img)); }

}  // namespace cellcat
