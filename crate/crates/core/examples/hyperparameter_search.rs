//! Random search over optimiser settings. The classifier stage repeats
//! every draw with plain SGD.

use ssl_har::engine::{hyperparameter_search, SearchSpace, SearchStage};
use ssl_har::optim::OptimizerKind;

fn main() -> anyhow::Result<()> {
    // a stand-in objective that prefers lr 1e-3 and small batches
    let score = |lr: f64, bs: usize| -(lr.log10() + 3.0).powi(2) - bs as f64 / 256.0;
    let space = SearchSpace::default();
    let out = hyperparameter_search(&space, SearchStage::Classifier, 5, 0, |_, t| {
        let sgd_penalty = if t.optimizer.kind == OptimizerKind::Sgd { 0.1 } else { 0.0 };
        Ok(score(t.optimizer.learning_rate, t.batch_size) - sgd_penalty)
    })?;
    for t in &out.trials {
        println!("#{:<2} {:?} lr {:e} bs {:<3} -> {:.3}", t.index, t.config.optimizer.kind, t.config.optimizer.learning_rate, t.config.batch_size, t.score.unwrap());
    }
    println!("best #{}: {:?}", out.best_index, out.best);
    Ok(())
}
