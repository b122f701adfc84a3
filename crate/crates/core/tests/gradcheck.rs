//! Central finite-difference verification of every differentiable op
//! at f64, plus an end-to-end check of the fused-preprocessing
//! gradient through the full cascade. The harness lives in `fd/` so
//! the acceptance target can rerun it under its time budget.

mod fd;

#[test]
fn conv2d_gradients() {
    fd::conv2d_check();
}

#[test]
fn pen_conv_7x7_gradients() {
    fd::pen_conv_check();
}

#[test]
fn batchnorm_gradients() {
    fd::batchnorm_check();
}

#[test]
fn activation_gradients() {
    fd::activations_check();
}

#[test]
fn bilinear_upsample_gradients() {
    fd::bilinear_check();
}

#[test]
fn linear_and_attention_primitive_gradients() {
    fd::linear_attention_check();
}

#[test]
fn transformer_block_gradients() {
    fd::transformer_check();
}

#[test]
fn dice_loss_gradients() {
    fd::dice_check();
}

#[test]
fn end_to_end_pen_gradient() {
    fd::end_to_end_pen_check();
}
