#pragma once

#include <map>
#include <string>

#include "noqs/params.hpp"
#include "noqs/tape.hpp"

namespace noqs {

// Parameters materialized as leaves on one tape. After the reverse sweep,
// grad() collects d(scalar)/d(parameter) in store order.
struct BoundParams {
    const ParamStore* store = nullptr;
    std::vector<ad::Node*> nodes;
    std::map<std::string, std::size_t> index;

    ad::Node* operator[](const std::string& name) const {
        auto it = index.find(name);
        if (it == index.end()) throw std::out_of_range("unbound parameter: " + name);
        return nodes[it->second];
    }

    std::vector<Eigen::MatrixXd> grad() const {
        std::vector<Eigen::MatrixXd> g;
        g.reserve(nodes.size());
        for (ad::Node* n : nodes)
            g.push_back(n->has_bar ? n->bar
                                   : Eigen::MatrixXd::Zero(n->val.rows(), n->val.cols()));
        return g;
    }
};

inline BoundParams bind(ad::Tape& t, const ParamStore& ps, bool requires_grad = true) {
    BoundParams bp;
    bp.store = &ps;
    bp.nodes.reserve(ps.size());
    for (std::size_t i = 0; i < ps.size(); ++i) {
        bp.nodes.push_back(t.leaf(ps.at(i), requires_grad));
        bp.index[ps.names()[i]] = i;
    }
    return bp;
}

} // namespace noqs
