// debug scratch: does the trained critic respond to its push input at all?
use riskadapt::checkpoint::Checkpoint;
use riskadapt::nn::critic_forward;
use riskadapt::risk::{coefficient_of_variation, distorted_value, DistortionMeasure};

fn main() {
    let ckpt = Checkpoint::load(std::path::Path::new(
        "/tmp/cal6/balancer_adaptive_seed0/checkpoint.bin",
    ))
    .unwrap();
    // [p, p_dot, v, vx_c, last_action, friction, mass_scale, active_push]
    let base = vec![0.01, 0.0, 0.0, 0.0, 0.0, 0.12, 1.0, 0.0];
    for push in [0.0, 4.0, 8.0, 12.0, -12.0] {
        let mut obs = base.clone();
        obs[7] = push;
        let dist = critic_forward(&ckpt.critic, &obs).unwrap();
        let v = distorted_value(&dist, &DistortionMeasure::Neutral);
        let cv = coefficient_of_variation(&dist);
        let spread = dist.values()[dist.n_quantiles() - 1] - dist.values()[0];
        println!("push {push:6.1}: mean {v:8.3} cv {cv:.4} spread {spread:8.3}");
    }
    // also vary pitch for contrast
    for p in [0.0, 0.3, 0.6] {
        let mut obs = base.clone();
        obs[0] = p;
        let dist = critic_forward(&ckpt.critic, &obs).unwrap();
        let v = distorted_value(&dist, &DistortionMeasure::Neutral);
        let cv = coefficient_of_variation(&dist);
        println!("pitch {p:4.1}: mean {v:8.3} cv {cv:.4}");
    }
}
