#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "uhdformer/train.hpp"

namespace uhd {

// Everything a run needs, merged from a sectioned key/value config file and
// command-line overrides. Keys are dotted: model.*, train.*, data.*.
struct CliConfig {
    UHDformerConfig model;
    TrainConfig train;
    std::string manifest;                // data.manifest
    std::string log_path = "train.log";  // train.log
};

// Applies one "section.key" assignment; ConfigError names the key on any
// unknown key or unparseable value.
void apply_config_kv(CliConfig& c, const std::string& key, const std::string& value);

// Parses the config file format: one "key = value" per line, '#' comments,
// blank lines ignored. ConfigError carries the line number.
CliConfig parse_config_text(const std::string& text);

// The merged config, printed in the same format the parser accepts.
std::string effective_config_text(const CliConfig& c);

// Full command-line front end; args excludes the program name. Exit codes:
// 0 success, 1 usage or config, 2 I/O or file format, 3 numerical failure
// (non-finite loss, failed self-test).
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace uhd
