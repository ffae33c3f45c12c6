#pragma once

#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "ganscreen/rng.hpp"
#include "ganscreen/tensor.hpp"

namespace testutil {

// Unique scratch directory, removed on destruction.
class TmpDir {
public:
    explicit TmpDir(const std::string& tag) {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("ganscreen_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::create_directories(path_);
    }
    ~TmpDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }
    std::string str() const { return path_.string(); }

private:
    std::filesystem::path path_;
};

inline ganscreen::Tensor random_tensor(ganscreen::Shape shape, ganscreen::Rng& rng, double scale = 1.0) {
    return ganscreen::Tensor::randn(std::move(shape), rng, scale);
}

inline double dot(const ganscreen::Tensor& a, const ganscreen::Tensor& b) {
    double s = 0.0;
    auto av = a.data();
    auto bv = b.data();
    for (std::size_t i = 0; i < av.size(); ++i) s += av[i] * bv[i];
    return s;
}

inline double max_abs_diff(const ganscreen::Tensor& a, const ganscreen::Tensor& b) {
    double m = 0.0;
    auto av = a.data();
    auto bv = b.data();
    for (std::size_t i = 0; i < av.size(); ++i) m = std::max(m, std::abs(av[i] - bv[i]));
    return m;
}

// Spearman rank correlation; used as an independent oracle for curve order.
inline double spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
    auto ranks = [](const std::vector<double>& v) {
        std::vector<std::size_t> idx(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) idx[i] = i;
        std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
        std::vector<double> r(v.size());
        for (std::size_t i = 0; i < idx.size(); ++i) r[idx[i]] = static_cast<double>(i);
        return r;
    };
    auto rx = ranks(xs);
    auto ry = ranks(ys);
    const double n = static_cast<double>(xs.size());
    double d2 = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) d2 += (rx[i] - ry[i]) * (rx[i] - ry[i]);
    return 1.0 - 6.0 * d2 / (n * (n * n - 1.0));
}

} // namespace testutil
