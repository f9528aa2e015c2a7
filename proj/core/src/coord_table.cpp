#include "copytrace/coord_table.hpp"

#include <cstring>
#include <fstream>

#include "copytrace/errors.hpp"

namespace copytrace {

namespace {

void check_dims(int h, int w, int sh, int sw) {
    if (h <= 0 || w <= 0 || sh <= 0 || sw <= 0) {
        throw ParamError("coord table dimensions must be positive");
    }
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
    out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
    out.push_back(static_cast<std::uint8_t>((v >> 16) & 0xff));
    out.push_back(static_cast<std::uint8_t>((v >> 24) & 0xff));
}

void put_i32(std::vector<std::uint8_t>& out, std::int32_t v) {
    put_u32(out, static_cast<std::uint32_t>(v));
}

std::uint32_t get_u32(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::int32_t get_i32(const std::uint8_t* p) { return static_cast<std::int32_t>(get_u32(p)); }

} // namespace

CoordTable::CoordTable(int height, int width, int source_height, int source_width)
    : height_(height), width_(width), source_height_(source_height), source_width_(source_width) {
    check_dims(height, width, source_height, source_width);
    mapping_.assign(static_cast<std::size_t>(height) * static_cast<std::size_t>(width), std::nullopt);
}

const std::optional<Coord>& CoordTable::lookup(Coord key) const {
    if (key.row < 0 || key.row >= height_ || key.col < 0 || key.col >= width_) {
        throw ParamError("lookup key (" + std::to_string(key.row) + "," + std::to_string(key.col) +
                         ") outside table dimensions " + std::to_string(height_) + "x" + std::to_string(width_));
    }
    return mapping_[idx(key.row, key.col)];
}

void CoordTable::set(Coord key, std::optional<Coord> value) {
    if (key.row < 0 || key.row >= height_ || key.col < 0 || key.col >= width_) {
        throw ParamError("set key outside table dimensions");
    }
    if (value && (value->row < 0 || value->row >= source_height_ || value->col < 0 || value->col >= source_width_)) {
        throw ParamError("set value outside source dimensions");
    }
    mapping_[idx(key.row, key.col)] = value;
}

std::size_t CoordTable::present_count() const {
    std::size_t n = 0;
    for (const auto& v : mapping_) n += v.has_value() ? 1 : 0;
    return n;
}

CoordTable identity_table(int height, int width) {
    CoordTable t(height, width, height, width);
    for (int r = 0; r < height; ++r) {
        for (int c = 0; c < width; ++c) {
            t.set({r, c}, Coord{r, c});
        }
    }
    return t;
}

std::optional<Coord> lookup(const CoordTable& table, Coord key) { return table.lookup(key); }

CoordTable map_values(const CoordTable& table,
                      const std::function<std::optional<Point>(Coord)>& point_map,
                      int new_source_height, int new_source_width) {
    CoordTable out(table.height(), table.width(), new_source_height, new_source_width);
    for (int r = 0; r < table.height(); ++r) {
        for (int c = 0; c < table.width(); ++c) {
            const auto& v = table.at(r, c);
            if (!v) continue;
            std::optional<Point> p = point_map(*v);
            if (!p) continue;
            Coord q{round_half_up(p->row), round_half_up(p->col)};
            if (q.row < 0 || q.row >= new_source_height || q.col < 0 || q.col >= new_source_width) continue;
            out.set({r, c}, q);
        }
    }
    return out;
}

CoordTable reverse(const CoordTable& table, int target_height, int target_width) {
    if (target_height != table.source_height() || target_width != table.source_width()) {
        throw ParamError("reverse target dims must equal the table's source dims");
    }
    CoordTable out(table.source_height(), table.source_width(), table.height(), table.width());
    // Row-major over the input keys; when two keys map to the same source
    // pixel the later key wins deterministically.
    for (int r = 0; r < table.height(); ++r) {
        for (int c = 0; c < table.width(); ++c) {
            const auto& v = table.at(r, c);
            if (!v) continue;
            out.set(*v, Coord{r, c});
        }
    }
    return out;
}

CoordTable reverse(const CoordTable& table) {
    return reverse(table, table.source_height(), table.source_width());
}

CoordTable compose(const CoordTable& outer, const CoordTable& inner) {
    if (inner.source_height() != outer.height() || inner.source_width() != outer.width()) {
        throw ParamError("compose: inner source dims must match outer keyed dims");
    }
    CoordTable out(inner.height(), inner.width(), outer.source_height(), outer.source_width());
    for (int r = 0; r < inner.height(); ++r) {
        for (int c = 0; c < inner.width(); ++c) {
            const auto& mid = inner.at(r, c);
            if (!mid) continue;
            const auto& v = outer.at(mid->row, mid->col);
            if (!v) continue;
            out.set({r, c}, *v);
        }
    }
    return out;
}

std::vector<std::uint8_t> serialize_table(const CoordTable& table) {
    std::vector<std::uint8_t> out;
    out.reserve(20 + static_cast<std::size_t>(table.height()) * table.width() * 8);
    out.push_back('P');
    out.push_back('T');
    out.push_back('T');
    out.push_back('1');
    put_u32(out, static_cast<std::uint32_t>(table.height()));
    put_u32(out, static_cast<std::uint32_t>(table.width()));
    put_u32(out, static_cast<std::uint32_t>(table.source_height()));
    put_u32(out, static_cast<std::uint32_t>(table.source_width()));
    for (int r = 0; r < table.height(); ++r) {
        for (int c = 0; c < table.width(); ++c) {
            const auto& v = table.at(r, c);
            put_i32(out, v ? v->row : -1);
            put_i32(out, v ? v->col : -1);
        }
    }
    return out;
}

CoordTable deserialize_table(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 20 || std::memcmp(bytes.data(), "PTT1", 4) != 0) {
        throw FormatError("coord table blob: bad magic or truncated header");
    }
    const std::uint32_t h = get_u32(bytes.data() + 4);
    const std::uint32_t w = get_u32(bytes.data() + 8);
    const std::uint32_t sh = get_u32(bytes.data() + 12);
    const std::uint32_t sw = get_u32(bytes.data() + 16);
    if (h == 0 || w == 0 || sh == 0 || sw == 0 || h > (1u << 20) || w > (1u << 20)) {
        throw FormatError("coord table blob: bad dimensions");
    }
    const std::size_t expect = 20 + static_cast<std::size_t>(h) * w * 8;
    if (bytes.size() != expect) {
        throw FormatError("coord table blob: payload size mismatch (expected " + std::to_string(expect) +
                          " bytes, got " + std::to_string(bytes.size()) + ")");
    }
    CoordTable t(static_cast<int>(h), static_cast<int>(w), static_cast<int>(sh), static_cast<int>(sw));
    const std::uint8_t* p = bytes.data() + 20;
    for (std::uint32_t r = 0; r < h; ++r) {
        for (std::uint32_t c = 0; c < w; ++c) {
            const std::int32_t vr = get_i32(p);
            const std::int32_t vc = get_i32(p + 4);
            p += 8;
            if (vr == -1 && vc == -1) continue;
            if (vr < 0 || vc < 0 || vr >= static_cast<std::int32_t>(sh) || vc >= static_cast<std::int32_t>(sw)) {
                throw FormatError("coord table blob: value out of source range at key (" + std::to_string(r) +
                                  "," + std::to_string(c) + ")");
            }
            t.set({static_cast<int>(r), static_cast<int>(c)}, Coord{vr, vc});
        }
    }
    return t;
}

void save_table(const CoordTable& table, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ParamError("cannot open for writing: " + path);
    auto bytes = serialize_table(table);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw ParamError("write failed: " + path);
}

CoordTable load_table(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ParamError("cannot open: " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return deserialize_table(bytes);
}

} // namespace copytrace
