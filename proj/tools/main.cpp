#include <CLI11.hpp>
#include <iostream>

#include "hfrwkv/commands.hpp"
#include "hfrwkv/engine.hpp"

using namespace hfrwkv::cli;

int main(int argc, char** argv) {
  CLI::App app{"HFRWKV bit-accurate accelerator model"};
  app.require_subcommand(1);

  QuantizeOptions q;
  std::string q_terms = "3,3,2";
  std::string q_scheme;
  auto* quantize = app.add_subcommand("quantize", "Quantize an interchange directory into a .hfrw container");
  quantize->add_option("input", q.input, "Interchange directory")->required()->check(CLI::ExistingDirectory);
  quantize->add_option("-o,--out", q.out, "Output container");
  quantize->add_option("--terms", q_terms, "Delta-PoT term bit widths");
  quantize->add_flag("--compare", q.compare, "Compare against baseline schemes on matrix tensors");
  quantize->add_option("--scheme", q_scheme, "Restrict --compare to one scheme (rtn, pot, logq, apot, dpot)");
  quantize->add_option("--bits", q.bits, "Baseline bit width")->check(CLI::Range(2, 16));
  quantize->add_flag("--pretty", q.pretty, "Print a table");

  DequantizeOptions dq;
  auto* dequantize = app.add_subcommand("dequantize", "Expand a container back into an interchange directory");
  dequantize->add_option("--model", dq.model, "Container")->required()->check(CLI::ExistingFile);
  dequantize->add_option("-o,--out", dq.out, "Output directory")->required();

  InferOptions inf;
  inf.threads = hfrwkv::engine::threads_from_env();
  std::string prompt = "0";
  auto* infer = app.add_subcommand("infer", "Run greedy decoding on the bit-accurate engine");
  infer->add_option("--model", inf.model, "Container")->required()->check(CLI::ExistingFile);
  infer->add_option("--prompt", prompt, "Token ids (\"1,2,3\" or @file)");
  infer->add_option("--tokens", inf.tokens, "Tokens to generate")->check(CLI::PositiveNumber);
  infer->add_option("--lanes", inf.lanes, "MVPA lanes (d)")->check(CLI::PositiveNumber);
  infer->add_option("--tree-par", inf.tree_par, "ATAC tree parallelism (P)")->check(CLI::PositiveNumber);
  infer->add_option("--threads", inf.threads, "Worker threads (default HFRWKV_THREADS)")->check(CLI::PositiveNumber);
  infer->add_flag("--strict", inf.strict, "Exit 2 if any hardware flag is raised");
  infer->add_flag("--pretty", inf.pretty, "Print a table");

  UnitsOptions u;
  auto* units = app.add_subcommand("units", "Exhaustive checks of the LOD, divider, exp, sigmoid units");
  units->add_option("--div-bits", u.div_bits, "Divider sweep operand width");
  units->add_flag("--pretty", u.pretty, "Print a table");

  CyclesOptions cy;
  int64_t lanes = 0, tree_par = 0;
  auto* cycles = app.add_subcommand("cycles", "Cycle counts for the reference configurations");
  cycles->add_option("--dim", cy.dim, "Input dimension l")->check(CLI::PositiveNumber);
  auto* lanes_opt = cycles->add_option("--lanes", lanes, "Custom lanes (d)")->check(CLI::PositiveNumber);
  auto* tree_opt = cycles->add_option("--tree-par", tree_par, "Custom tree parallelism (P)")->check(CLI::PositiveNumber);
  cycles->add_flag("--pretty", cy.pretty, "Print a table");

  std::string cb_terms = "3,3,2";
  auto* codebook = app.add_subcommand("codebook", "List Delta-PoT magnitude levels");
  codebook->add_option("--terms", cb_terms, "Term bit widths");

  std::filesystem::path v_model;
  bool v_pretty = false;
  auto* validate = app.add_subcommand("validate", "Check a container and print its directory");
  validate->add_option("--model", v_model, "Container")->required()->check(CLI::ExistingFile);
  validate->add_flag("--pretty", v_pretty, "Print a table");

  RandomModelOptions rm;
  auto* random = app.add_subcommand("random-model", "Write a seeded random float model");
  random->add_option("--layers", rm.dims.n_layers, "Layers");
  random->add_option("--hidden", rm.dims.hidden, "Hidden dimension");
  random->add_option("--ffn", rm.dims.ffn, "FFN dimension");
  random->add_option("--vocab", rm.dims.vocab, "Vocabulary size");
  random->add_option("--seed", rm.seed, "Seed");
  random->add_option("-o,--out", rm.out, "Output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*quantize) {
      q.term_bits = parse_term_bits(q_terms);
      if (!q_scheme.empty()) q.scheme = q_scheme;
      return cmd_quantize(q, std::cout, std::cerr);
    }
    if (*dequantize) return cmd_dequantize(dq, std::cout, std::cerr);
    if (*infer) {
      inf.prompt = parse_prompt(prompt);
      return cmd_infer(inf, std::cout, std::cerr);
    }
    if (*units) return cmd_units(u, std::cout, std::cerr);
    if (*cycles) {
      if (*lanes_opt) cy.lanes = lanes;
      if (*tree_opt) cy.tree_par = tree_par;
      return cmd_cycles(cy, std::cout, std::cerr);
    }
    if (*codebook) return cmd_codebook(parse_term_bits(cb_terms), std::cout, std::cerr);
    if (*validate) return cmd_validate(v_model, v_pretty, std::cout, std::cerr);
    if (*random) return cmd_random_model(rm, std::cout, std::cerr);
  } catch (const std::exception& e) {
    std::cerr << "hfrwkv: " << e.what() << "\n";
    return kExitError;
  }
  return kExitError;
}
