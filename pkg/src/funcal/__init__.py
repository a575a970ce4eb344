"""Numerical approximation of nonlinear functionals on function spaces."""

__version__ = "0.1.0"

from .basis1d import (Basis1D, MatrixC, advection_matrix, build_basis,
                      gram_schmidt, matrix_exponential, project)
from .funcspace import (NodeSet, TestFunction, gaussian_ensemble,
                        inner_product, shat_cardinality, shat_nodes,
                        sparse_nodes)
from .functionals import (FunctionalModel, Kernel1, Kernel2, builtin_linear,
                          builtin_quadratic, custom_cylindrical, evaluate,
                          evaluate_batch, exp_neg_norm_sq,
                          functional_derivative, hopf_gaussian, hopf_uniform,
                          linear_model, quadratic_model, sine_model,
                          symmetrize_kernel, white_noise)
from .interp import (IndexSet, KernelInterpolant, PorterInterpolant,
                     PrenterInterpolant, export_sweep_csv, greedy_next_node,
                     interp_derivative, interp_eval, interp_eval_batch,
                     interp_from_json, kappa_value, kernel_build,
                     khlobystov_eval, khlobystov_extract, khlobystov_moment,
                     linear_sweep, porter_build, porter_build_recursive,
                     porter_extend, porter_h_matrix, prenter_build,
                     quadratic_sup_error)
from .hdmr_stoch import (ClusterExpansion, ClusterSingularityError,
                         HDMRExpansion, anova_hdmr, cluster_approx, cut_hdmr,
                         cylindrical_integral, export_hdmr_csv,
                         export_kernel_csv, wiener_kernels_mc)
from .tensor import (CPTensor, HTTensor, TTTensor, TuckerTensor,
                     apply_separable_operator, balanced_tree, cp_als_fit,
                     cp_eval, cp_partials, export_residual_csv,
                     hopf_rank1_fit, ht_core, ht_dense, ht_eval, ht_fit,
                     phi_gram, phi_matrix, rank_reduce, sine_coefficients,
                     sine_rank_sweep, tensor_add, tensor_from_json,
                     tensor_norm, tensor_scale, tensor_to_json, tt_dense,
                     tt_eval, tt_fit, tucker_dense, tucker_hosvd)

__all__ = [
    "Basis1D", "MatrixC", "advection_matrix", "build_basis", "gram_schmidt",
    "matrix_exponential", "project",
    "NodeSet", "TestFunction", "gaussian_ensemble", "inner_product",
    "shat_cardinality", "shat_nodes", "sparse_nodes",
    "FunctionalModel", "Kernel1", "Kernel2", "builtin_linear",
    "builtin_quadratic", "custom_cylindrical", "evaluate", "evaluate_batch",
    "exp_neg_norm_sq", "functional_derivative", "hopf_gaussian",
    "hopf_uniform", "linear_model", "quadratic_model", "sine_model",
    "symmetrize_kernel", "white_noise",
    "IndexSet", "KernelInterpolant", "PorterInterpolant",
    "PrenterInterpolant", "export_sweep_csv", "greedy_next_node",
    "interp_derivative", "interp_eval", "interp_eval_batch",
    "interp_from_json", "kappa_value", "kernel_build", "khlobystov_eval",
    "khlobystov_extract", "khlobystov_moment", "linear_sweep",
    "porter_build", "porter_build_recursive", "porter_extend",
    "porter_h_matrix", "prenter_build", "quadratic_sup_error",
    "ClusterExpansion", "ClusterSingularityError", "HDMRExpansion",
    "anova_hdmr", "cluster_approx", "cut_hdmr", "cylindrical_integral",
    "export_hdmr_csv", "export_kernel_csv", "wiener_kernels_mc",
    "CPTensor", "HTTensor", "TTTensor", "TuckerTensor",
    "apply_separable_operator", "balanced_tree", "cp_als_fit", "cp_eval",
    "cp_partials", "export_residual_csv", "hopf_rank1_fit", "ht_core",
    "ht_dense", "ht_eval", "ht_fit", "phi_gram", "phi_matrix",
    "rank_reduce", "sine_coefficients", "sine_rank_sweep", "tensor_add",
    "tensor_from_json", "tensor_norm", "tensor_scale", "tensor_to_json",
    "tt_dense", "tt_eval", "tt_fit", "tucker_dense", "tucker_hosvd",
]
