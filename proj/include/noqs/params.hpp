#pragma once

#include <Eigen/Dense>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "noqs/rng.hpp"

namespace noqs {

// Ordered, named collection of dense parameter matrices. Insertion order is
// the canonical order for flattening (optimizer state, checkpoints).
class ParamStore {
public:
    using Mat = Eigen::MatrixXd;

    Mat& add(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
        if (index_.count(name)) throw std::logic_error("duplicate parameter: " + name);
        index_[name] = names_.size();
        names_.push_back(name);
        mats_.emplace_back(Mat::Zero(rows, cols));
        return mats_.back();
    }

    Mat& add_normal(const std::string& name, Eigen::Index rows, Eigen::Index cols, Rng& rng,
                    double std_dev) {
        Mat& m = add(name, rows, cols);
        for (Eigen::Index i = 0; i < rows; ++i)
            for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = std_dev * rng.normal();
        return m;
    }

    Mat& add_constant(const std::string& name, Eigen::Index rows, Eigen::Index cols, double v) {
        Mat& m = add(name, rows, cols);
        m.setConstant(v);
        return m;
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    Mat& operator[](const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
        return mats_[it->second];
    }
    const Mat& operator[](const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
        return mats_[it->second];
    }

    std::size_t size() const { return names_.size(); }
    const std::vector<std::string>& names() const { return names_; }
    Mat& at(std::size_t i) { return mats_[i]; }
    const Mat& at(std::size_t i) const { return mats_[i]; }

    std::size_t total_count() const {
        std::size_t n = 0;
        for (const Mat& m : mats_) n += static_cast<std::size_t>(m.size());
        return n;
    }

    std::vector<double> flatten() const {
        std::vector<double> out;
        out.reserve(total_count());
        for (const Mat& m : mats_)
            for (Eigen::Index i = 0; i < m.rows(); ++i)
                for (Eigen::Index j = 0; j < m.cols(); ++j) out.push_back(m(i, j));
        return out;
    }

    void unflatten(const std::vector<double>& flat) {
        if (flat.size() != total_count())
            throw std::invalid_argument("ParamStore::unflatten: size mismatch");
        std::size_t k = 0;
        for (Mat& m : mats_)
            for (Eigen::Index i = 0; i < m.rows(); ++i)
                for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = flat[k++];
    }

private:
    std::vector<std::string> names_;
    std::vector<Mat> mats_;
    std::map<std::string, std::size_t> index_;
};

} // namespace noqs
