#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace copytrace {

/// Integer pixel coordinate, (row, col), 0-based.
struct Coord {
    int row = 0;
    int col = 0;

    friend bool operator==(const Coord&, const Coord&) = default;
};

/// Real-valued point in pixel-index space, used by coordinate transforms
/// before rounding.
struct Point {
    double row = 0.0;
    double col = 0.0;
};

/// Rounding rule used everywhere a real coordinate becomes a pixel index:
/// round-half-up per axis.
inline int round_half_up(double x) { return static_cast<int>(std::floor(x + 0.5)); }

/// Dense per-pixel coordinate mapping from a keyed (edited) frame to a
/// source frame. Entry (r, c) holds the source coordinate the pixel was
/// traced to, or is absent when the pixel has no counterpart (cropped
/// away, matted, occluded, fill). Immutable by convention once built:
/// all operations below are pure and return new tables.
class CoordTable {
public:
    CoordTable() = default;

    /// All-absent table with the given keyed and source dimensions.
    CoordTable(int height, int width, int source_height, int source_width);

    int height() const { return height_; }
    int width() const { return width_; }
    int source_height() const { return source_height_; }
    int source_width() const { return source_width_; }

    /// Value stored at key, or absent. Throws ParamError when the key is
    /// outside the keyed dimensions (out-of-bounds is distinct from absent).
    const std::optional<Coord>& lookup(Coord key) const;

    /// Unchecked row-major access for hot loops.
    const std::optional<Coord>& at(int r, int c) const { return mapping_[idx(r, c)]; }

    /// Sets one entry. The value must be in range for the source dims.
    void set(Coord key, std::optional<Coord> value);

    std::size_t present_count() const;

    friend bool operator==(const CoordTable&, const CoordTable&) = default;

private:
    std::size_t idx(int r, int c) const {
        return static_cast<std::size_t>(r) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(c);
    }

    int height_ = 0;
    int width_ = 0;
    int source_height_ = 0;
    int source_width_ = 0;
    std::vector<std::optional<Coord>> mapping_;
};

/// Self-mapping table: every pixel maps to itself, source dims equal
/// keyed dims. Throws ParamError for non-positive dimensions.
CoordTable identity_table(int height, int width);

/// Value at `key`, or absent. Free-function form of CoordTable::lookup.
std::optional<Coord> lookup(const CoordTable& table, Coord key);

/// Replaces every present value v by round(point_map(v)); values that
/// round outside new_source_dims or for which point_map returns absent
/// become absent. Keys are untouched. point_map is the forward
/// coordinate transform of one edit, from the current source frame into
/// the new frame.
CoordTable map_values(const CoordTable& table,
                      const std::function<std::optional<Point>(Coord)>& point_map,
                      int new_source_height, int new_source_width);

/// Swaps keys and values. The result is keyed on the source frame;
/// iteration over the input keys is row-major and when several keys
/// share one value the later assignment overrides the earlier, so the
/// result is deterministic. Source pixels never hit stay absent.
/// target_dims must equal the table's source dims (checked).
CoordTable reverse(const CoordTable& table, int target_height, int target_width);

/// reverse() against the table's own source dims.
CoordTable reverse(const CoordTable& table);

/// Two-hop composition: inner maps frame X->Y, outer maps Y->Z, the
/// result maps X->Z with result[c] = outer[inner[c]]. Absence in either
/// hop propagates. Throws ParamError when inner's source dims do not
/// match outer's keyed dims.
CoordTable compose(const CoordTable& outer, const CoordTable& inner);

/// ".ptt" byte format: "PTT1" | u32le height, width, source_height,
/// source_width | height*width pairs of i32le (row, col) in row-major
/// key order, absent encoded as (-1,-1). The sentinel exists only in the
/// serialized form.
std::vector<std::uint8_t> serialize_table(const CoordTable& table);

/// Parses the ".ptt" format. Throws FormatError on bad magic, truncated
/// or oversized payload, or out-of-range values.
CoordTable deserialize_table(const std::vector<std::uint8_t>& bytes);

void save_table(const CoordTable& table, const std::string& path);
CoordTable load_table(const std::string& path);

} // namespace copytrace
