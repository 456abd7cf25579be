#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "tatt/tatt.hpp"

namespace tatt::test::oracle {

using D = double;
using Mat = std::vector<std::vector<D>>;

inline Mat to_mat(const Tensor<D>& t, std::size_t rows, std::size_t cols, std::size_t offset = 0) {
    Mat m(rows, std::vector<D>(cols));
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) m[i][j] = t[offset + i * cols + j];
    return m;
}

inline Mat mat_mul(const Mat& a, const Mat& b) {
    Mat c(a.size(), std::vector<D>(b[0].size(), 0.0));
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t k = 0; k < b.size(); ++k)
            for (std::size_t j = 0; j < b[0].size(); ++j) c[i][j] += a[i][k] * b[k][j];
    return c;
}

inline Mat columns(const Mat& a, std::size_t from, std::size_t n) {
    Mat r(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) r[i].assign(a[i].begin() + from, a[i].begin() + from + n);
    return r;
}

struct Head {
    Mat out, attn;
};

inline Head scalar_head(const Mat& f_e, const Mat& f_i, const Mat& wa, const Mat& wb, const Mat& wg) {
    const Mat q = mat_mul(f_i, wa), k = mat_mul(f_e, wb), v = mat_mul(f_e, wg);
    const std::size_t dk = wa[0].size();
    Head h;
    for (const auto& qi : q) {
        std::vector<D> s(k.size());
        for (std::size_t j = 0; j < k.size(); ++j) {
            s[j] = std::inner_product(qi.begin(), qi.end(), k[j].begin(), 0.0) / std::sqrt(static_cast<D>(dk));
        }
        const D mx = *std::max_element(s.begin(), s.end());
        D z = 0;
        for (auto& e : s) z += (e = std::exp(e - mx));
        for (auto& e : s) e /= z;
        std::vector<D> o(dk, 0.0);
        for (std::size_t j = 0; j < k.size(); ++j)
            for (std::size_t d = 0; d < dk; ++d) o[d] += s[j] * v[j][d];
        h.attn.push_back(s);
        h.out.push_back(o);
    }
    return h;
}

/// Channel split → per-head scalar attention → concatenation → W^o.
inline std::pair<Mat, std::vector<Mat>> scalar_mca(const Mat& f_e, const Mat& f_i, const AttentionConfig& cfg,
                                            const ParamStore<D>& ps, const std::string& path) {
    const std::size_t g = cfg.group();
    Mat cat(f_i.size());
    std::vector<Mat> maps;
    for (std::size_t i = 0; i < cfg.heads; ++i) {
        const std::string hp = path + "/head" + std::to_string(i);
        auto h = scalar_head(columns(f_e, i * g, g), columns(f_i, i * g, g), to_mat(ps.get(hp + "/w_alpha"), g, cfg.d_k),
                             to_mat(ps.get(hp + "/w_beta"), g, cfg.d_k), to_mat(ps.get(hp + "/w_gamma"), g, cfg.d_k));
        for (std::size_t r = 0; r < f_i.size(); ++r) cat[r].insert(cat[r].end(), h.out[r].begin(), h.out[r].end());
        maps.push_back(h.attn);
    }
    return {mat_mul(cat, to_mat(ps.get(path + "/w_o"), cfg.heads * cfg.d_k, cfg.channels)), maps};
}

}  // namespace tatt::test::oracle
