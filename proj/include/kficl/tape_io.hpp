#pragma once

#include "kficl/dataset_io.hpp"
#include "kficl/tape_vm.hpp"

namespace kficl {

/// Tape contents in the dataset's nested-row format plus the register table.
inline json tape_to_json(const Tape& tape) {
    json doc;
    doc["version"] = kDatasetVersion;
    doc["mode"] = to_string(tape.layout.mode);
    doc["n"] = tape.layout.n;
    doc["N"] = tape.layout.N;
    doc["append_cols"] = tape.layout.append_cols;
    doc["data"] = matrix_to_json(tape.data);
    json regs = json::object();
    for (const auto& name : tape.layout.order) {
        const Region& r = tape.layout.registers.at(name);
        regs[name] = {r.row, r.col, r.rows, r.cols};
    }
    doc["registers"] = std::move(regs);
    return doc;
}

}  // namespace kficl
