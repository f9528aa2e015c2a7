#include "copytrace/supervision.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "copytrace/errors.hpp"

namespace copytrace {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
    out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
    out.push_back(static_cast<std::uint8_t>((v >> 16) & 0xff));
    out.push_back(static_cast<std::uint8_t>((v >> 24) & 0xff));
}

std::uint32_t get_u32(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void put_f32(std::vector<std::uint8_t>& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

float get_f32(const std::uint8_t* p) {
    const std::uint32_t bits = get_u32(p);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

} // namespace

PatchGrid::PatchGrid(int image_height_, int image_width_, int patch_size_)
    : image_height(image_height_), image_width(image_width_), patch_size(patch_size_) {
    if (patch_size <= 0) throw ParamError("patch size must be positive");
    if (image_height <= 0 || image_width <= 0) throw ParamError("image dims must be positive");
    if (image_height % patch_size != 0 || image_width % patch_size != 0) {
        throw ParamError("image dims " + std::to_string(image_height) + "x" + std::to_string(image_width) +
                         " not divisible by patch size " + std::to_string(patch_size));
    }
    rows = image_height / patch_size;
    cols = image_width / patch_size;
}

Point PatchGrid::centroid(int patch_index) const {
    const int pr = patch_index / cols;
    const int pc = patch_index % cols;
    return Point{pr * patch_size + (patch_size - 1) / 2.0, pc * patch_size + (patch_size - 1) / 2.0};
}

int TargetDistribution::unmasked_count() const {
    int n = 0;
    for (auto m : row_mask) n += m ? 1 : 0;
    return n;
}

Eigen::MatrixXi overlap_counts(const CoordTable& table_qr, const PatchGrid& grid_q, const PatchGrid& grid_r) {
    if (table_qr.height() != grid_q.image_height || table_qr.width() != grid_q.image_width) {
        throw ParamError("overlap_counts: table not keyed on the query grid dims");
    }
    if (table_qr.source_height() != grid_r.image_height || table_qr.source_width() != grid_r.image_width) {
        throw ParamError("overlap_counts: table source dims differ from the reference grid dims");
    }
    Eigen::MatrixXi counts = Eigen::MatrixXi::Zero(grid_q.patch_count(), grid_r.patch_count());
    for (int r = 0; r < table_qr.height(); ++r) {
        for (int c = 0; c < table_qr.width(); ++c) {
            const auto& v = table_qr.at(r, c);
            if (!v) continue;
            counts(grid_q.patch_index(r, c), grid_r.patch_index(v->row, v->col)) += 1;
        }
    }
    return counts;
}

Eigen::MatrixXd prior_qhat(const Eigen::MatrixXi& counts, const PatchGrid& grid_q) {
    const double area = static_cast<double>(grid_q.patch_size) * grid_q.patch_size;
    return counts.cast<double>() / area;
}

std::vector<std::uint8_t> row_mask_from_counts(const Eigen::MatrixXi& counts) {
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(counts.rows()));
    for (Eigen::Index i = 0; i < counts.rows(); ++i) mask[static_cast<std::size_t>(i)] = counts.row(i).sum() > 0;
    return mask;
}

TargetDistribution sharpen(const Eigen::MatrixXd& qhat, double gamma, const std::vector<std::uint8_t>& row_mask) {
    if (gamma < 0) throw ParamError("sharpen: gamma must be nonnegative");
    if (row_mask.size() != static_cast<std::size_t>(qhat.rows())) {
        throw ParamError("sharpen: row mask length differs from row count");
    }
    TargetDistribution out;
    out.matrix = Eigen::MatrixXd::Zero(qhat.rows(), qhat.cols());
    out.row_mask = row_mask;
    out.gamma = gamma;

    const bool infinite = std::isinf(gamma);
    for (Eigen::Index i = 0; i < qhat.rows(); ++i) {
        if (!row_mask[static_cast<std::size_t>(i)]) continue;
        // Support = strictly positive entries of the row.
        std::vector<Eigen::Index> support;
        for (Eigen::Index j = 0; j < qhat.cols(); ++j) {
            if (qhat(i, j) > 0) support.push_back(j);
        }
        if (support.empty()) throw ParamError("sharpen: unmasked row " + std::to_string(i) + " has empty support");

        if (infinite) {
            Eigen::Index best = support[0];
            for (Eigen::Index j : support) {
                if (qhat(i, j) > qhat(i, best)) best = j; // ties keep the lowest index
            }
            out.matrix(i, best) = 1.0;
        } else if (gamma == 0.0) {
            const double u = 1.0 / static_cast<double>(support.size());
            for (Eigen::Index j : support) out.matrix(i, j) = u;
        } else {
            // Stable escort weights: exp(gamma * (ln q - max ln q)).
            double max_ln = -std::numeric_limits<double>::infinity();
            for (Eigen::Index j : support) max_ln = std::max(max_ln, std::log(qhat(i, j)));
            double total = 0.0;
            for (Eigen::Index j : support) {
                const double w = std::exp(gamma * (std::log(qhat(i, j)) - max_ln));
                out.matrix(i, j) = w;
                total += w;
            }
            for (Eigen::Index j : support) out.matrix(i, j) /= total;
        }
    }
    return out;
}

MatchAssignment locnn_targets(const CoordTable& table_qr, const PatchGrid& grid_q, const PatchGrid& grid_r, int k) {
    if (k <= 0) throw ParamError("locnn_targets: k must be positive");
    if (k > grid_r.patch_count()) throw ParamError("locnn_targets: k exceeds the reference patch count");
    if (table_qr.height() != grid_q.image_height || table_qr.width() != grid_q.image_width) {
        throw ParamError("locnn_targets: table not keyed on the query grid dims");
    }
    // All tracked pixels, in row-major order so distance ties resolve to
    // the first candidate deterministically.
    std::vector<std::pair<Coord, Coord>> tracked;
    for (int r = 0; r < table_qr.height(); ++r) {
        for (int c = 0; c < table_qr.width(); ++c) {
            const auto& v = table_qr.at(r, c);
            if (v) tracked.push_back({Coord{r, c}, *v});
        }
    }

    MatchAssignment out;
    out.matches.resize(static_cast<std::size_t>(grid_q.patch_count()));
    const double w = 1.0 / k;
    for (int pi = 0; pi < grid_q.patch_count(); ++pi) {
        const Point cen = grid_q.centroid(pi);
        const int r0 = (pi / grid_q.cols) * grid_q.patch_size;
        const int c0 = (pi % grid_q.cols) * grid_q.patch_size;
        // A patch with no tracked pixel of its own is masked, mirroring the
        // overlap-based row mask.
        bool participates = false;
        for (int r = r0; r < r0 + grid_q.patch_size && !participates; ++r) {
            for (int c = c0; c < c0 + grid_q.patch_size; ++c) {
                if (table_qr.at(r, c)) {
                    participates = true;
                    break;
                }
            }
        }
        if (!participates) continue;
        // The heuristic reads location only: it stands on the tracked pixel
        // nearest to the patch centroid anywhere in the frame. When the
        // centroid zone itself is untracked (matting border, rotation
        // cut-off) that pixel may belong to a neighboring patch, which is
        // exactly how the location heuristic picks reference patches with
        // zero true overlap.
        std::optional<Coord> mapped;
        double best = std::numeric_limits<double>::infinity();
        for (const auto& [key, value] : tracked) {
            const double d =
                (key.row - cen.row) * (key.row - cen.row) + (key.col - cen.col) * (key.col - cen.col);
            if (d < best) {
                best = d;
                mapped = value;
            }
        }
        if (!mapped) continue;
        // k reference patches with nearest centroids, ties by lower index.
        std::vector<std::pair<double, int>> dist;
        dist.reserve(static_cast<std::size_t>(grid_r.patch_count()));
        for (int pj = 0; pj < grid_r.patch_count(); ++pj) {
            const Point cj = grid_r.centroid(pj);
            const double d = (mapped->row - cj.row) * (mapped->row - cj.row) +
                             (mapped->col - cj.col) * (mapped->col - cj.col);
            dist.emplace_back(d, pj);
        }
        std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
        auto& row = out.matches[static_cast<std::size_t>(pi)];
        for (int t = 0; t < k; ++t) row.emplace_back(dist[static_cast<std::size_t>(t)].second, w);
    }
    return out;
}

MatchAssignment featnn_targets(const Eigen::MatrixXd& tokens_q, const Eigen::MatrixXd& tokens_r, int k) {
    if (k <= 0) throw ParamError("featnn_targets: k must be positive");
    if (k > tokens_r.rows()) throw ParamError("featnn_targets: k exceeds the reference token count");
    if (tokens_q.cols() != tokens_r.cols()) throw ParamError("featnn_targets: feature dims differ");
    MatchAssignment out;
    out.matches.resize(static_cast<std::size_t>(tokens_q.rows()));
    const double w = 1.0 / k;
    const Eigen::MatrixXd sims = tokens_q * tokens_r.transpose();
    for (Eigen::Index i = 0; i < tokens_q.rows(); ++i) {
        std::vector<int> order(static_cast<std::size_t>(tokens_r.rows()));
        for (std::size_t j = 0; j < order.size(); ++j) order[j] = static_cast<int>(j);
        std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](int a, int b) {
            if (sims(i, a) != sims(i, b)) return sims(i, a) > sims(i, b);
            return a < b; // descending similarity, ties by lowest index
        });
        auto& row = out.matches[static_cast<std::size_t>(i)];
        for (int t = 0; t < k; ++t) row.emplace_back(order[static_cast<std::size_t>(t)], w);
    }
    return out;
}

TargetDistribution assignment_to_distribution(const MatchAssignment& assignment, int n_ref) {
    if (n_ref <= 0) throw ParamError("assignment_to_distribution: reference count must be positive");
    const auto n_q = static_cast<Eigen::Index>(assignment.matches.size());
    TargetDistribution out;
    out.matrix = Eigen::MatrixXd::Zero(n_q, n_ref);
    out.row_mask.assign(assignment.matches.size(), 0);
    out.gamma = 1.0;
    for (std::size_t i = 0; i < assignment.matches.size(); ++i) {
        for (const auto& [j, w] : assignment.matches[i]) {
            if (j < 0 || j >= n_ref) throw ParamError("assignment_to_distribution: reference index out of range");
            out.matrix(static_cast<Eigen::Index>(i), j) += w;
        }
        out.row_mask[i] = assignment.matches[i].empty() ? 0 : 1;
    }
    return out;
}

std::vector<std::uint8_t> serialize_targets(const TargetDistribution& targets) {
    const auto nq = static_cast<std::uint32_t>(targets.matrix.rows());
    const auto nr = static_cast<std::uint32_t>(targets.matrix.cols());
    if (targets.row_mask.size() != nq) throw ParamError("serialize_targets: mask length differs from row count");
    std::vector<std::uint8_t> out;
    out.reserve(12 + nq + static_cast<std::size_t>(nq) * nr * 4);
    out.push_back('T');
    out.push_back('G');
    out.push_back('T');
    out.push_back('1');
    put_u32(out, nq);
    put_u32(out, nr);
    for (std::uint32_t i = 0; i < nq; ++i) out.push_back(targets.row_mask[i] ? 1 : 0);
    for (std::uint32_t i = 0; i < nq; ++i) {
        for (std::uint32_t j = 0; j < nr; ++j) put_f32(out, static_cast<float>(targets.matrix(i, j)));
    }
    return out;
}

TargetDistribution deserialize_targets(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 12 || std::memcmp(bytes.data(), "TGT1", 4) != 0) {
        throw FormatError("target blob: bad magic or truncated header");
    }
    const std::uint32_t nq = get_u32(bytes.data() + 4);
    const std::uint32_t nr = get_u32(bytes.data() + 8);
    const std::size_t expect = 12 + nq + static_cast<std::size_t>(nq) * nr * 4;
    if (nq == 0 || nr == 0 || bytes.size() != expect) {
        throw FormatError("target blob: payload size mismatch");
    }
    TargetDistribution out;
    out.matrix = Eigen::MatrixXd(nq, nr);
    out.row_mask.resize(nq);
    out.gamma = std::numeric_limits<double>::quiet_NaN();
    const std::uint8_t* p = bytes.data() + 12;
    for (std::uint32_t i = 0; i < nq; ++i) {
        if (p[i] > 1) throw FormatError("target blob: mask byte not 0/1");
        out.row_mask[i] = p[i];
    }
    p += nq;
    for (std::uint32_t i = 0; i < nq; ++i) {
        for (std::uint32_t j = 0; j < nr; ++j) {
            const float v = get_f32(p);
            p += 4;
            if (!std::isfinite(v) || v < 0) throw FormatError("target blob: entry not finite and nonnegative");
            out.matrix(i, j) = v;
        }
    }
    return out;
}

void save_targets(const TargetDistribution& targets, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ParamError("cannot open for writing: " + path);
    auto bytes = serialize_targets(targets);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw ParamError("write failed: " + path);
}

TargetDistribution load_targets(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ParamError("cannot open: " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return deserialize_targets(bytes);
}

} // namespace copytrace
